//! Image-quality and multi-view-consistency metrics.

pub mod perceptual;
pub mod pplc;
pub mod psnr;
pub mod ssim;

pub use perceptual::{perceptual_distance, EncoderFeatures, FeatureExtractor, RandomPyramid};
pub use pplc::{pplc, PairScore, PplcOptions, PplcReport};
pub use psnr::{psnr, PSNR_CAP};
pub use ssim::ssim;
