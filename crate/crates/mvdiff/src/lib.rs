//! Desk-scale multi-view diffusion engine for novel view synthesis from a
//! single image, trained and evaluated on procedural synthetic scenes.
//!
//! The crate is organized around the data path:
//! camera geometry and Plücker ray maps ([`geometry`]), a procedural scene
//! generator and ray-cast renderer ([`scene`]), a DDPM noise schedule
//! ([`diffusion`]), a UNet-style denoiser with per-pixel ray-conditioned
//! normalization and cross-view attention ([`net`]), the two-stage trainer
//! ([`train`]), the classifier-free-guided multi-view sampler ([`sampler`]),
//! and image/video metrics including the rectified path-consistency score
//! ([`metrics`]). All tensor math is f64 and single threaded; every random
//! draw flows from one named seed through [`rng`].

pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod kv;
pub mod latent;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
