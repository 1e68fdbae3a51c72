//! Hand-rolled neural network stack: parameter/gradient stores, conv and
//! normalization layers with explicit backward passes, conditioning
//! embeddings, ray-conditioned normalization, cross-view attention, and the
//! multi-view UNet denoiser assembled from them.

pub mod attention;
pub mod denoiser;
pub mod embed;
pub mod layers;
pub mod modulation;
pub mod params;

#[cfg(test)]
pub(crate) mod testutil;

pub use attention::ViewAttention;
pub use denoiser::{CondMode, Denoiser, DenoiserConfig, ForwardCache, MultiViewBatch};
pub use modulation::RayModulation;
pub use params::{init_params_from_specs, is_new_param, GradStore, Init, ParamSpec, ParamStore};
