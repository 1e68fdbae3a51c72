//! Perceptual distance: mean over feature scales of the mean squared
//! difference between unit-normalized feature maps.
//!
//! The default extractor is a fixed-seed random convolution pyramid. Random
//! features preserve ordinal comparisons (more corruption → larger
//! distance) without any external weights; the trait lets a trained
//! encoder be slotted in instead.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Model;
use crate::error::{Error, Result};
use crate::latent::image_to_latent;
use crate::rng::{mix, mix_index, stream};

/// Multi-scale feature map 𝓕: image (h, w, 3) in [0,1] → one (channels,
/// h', w') tensor per scale. Implementations must be deterministic.
pub trait FeatureExtractor {
    fn features(&self, image: &Array3<f64>) -> Vec<Array3<f64>>;
}

/// Fixed-seed random conv pyramid. Each scale halves the resolution by
/// average pooling, then applies a bank of random 3×3 kernels (clamp-to-
/// edge padding) with a tanh nonlinearity.
///
/// The pyramid reads a channel-symmetric gray image (the RGB values are
/// sorted before summing, so any global channel permutation produces the
/// bit-identical gray plane and therefore bit-identical features).
#[derive(Debug, Clone)]
pub struct RandomPyramid {
    /// Per scale: bank of (channels, 3, 3) kernels.
    kernels: Vec<Array3<f64>>,
}

impl RandomPyramid {
    pub fn new(seed: u64, scales: usize, channels: usize) -> Result<Self> {
        if scales < 2 {
            return Err(Error::Config(format!("feature pyramid needs at least 2 scales, got {scales}")));
        }
        if channels == 0 {
            return Err(Error::Config("feature pyramid needs at least one channel".into()));
        }
        let kernels = (0..scales)
            .map(|s| {
                let mut rng = stream(mix_index(mix(seed, "feature-pyramid"), s as u64));
                Array3::from_shape_simple_fn((channels, 3, 3), || rng.sample::<f64, _>(StandardNormal) / 3.0)
            })
            .collect();
        Ok(RandomPyramid { kernels })
    }
}

impl Default for RandomPyramid {
    fn default() -> Self {
        RandomPyramid::new(0, 3, 8).expect("default pyramid config is valid")
    }
}

/// Channel-order-independent gray plane: per pixel, sort the three values
/// before summing so the float addition order never depends on the
/// channel layout.
fn symmetric_gray(image: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = image.dim();
    let mut gray = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut v: Vec<f64> = (0..c).map(|ci| image[(y, x, ci)]).collect();
            v.sort_by(f64::total_cmp);
            gray[(y, x)] = v.iter().sum::<f64>() / c as f64;
        }
    }
    gray
}

fn conv3_clamped(plane: &Array2<f64>, kernel: &ndarray::ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = (y + ky).saturating_sub(1).min(h - 1);
                    let sx = (x + kx).saturating_sub(1).min(w - 1);
                    acc += plane[(sy, sx)] * kernel[(ky, kx)];
                }
            }
            out[(y, x)] = acc;
        }
    }
    out
}

fn avg_pool2(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let (y0, x0) = (2 * y, 2 * x);
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            out[(y, x)] = (plane[(y0, x0)] + plane[(y0, x1)] + plane[(y1, x0)] + plane[(y1, x1)]) / 4.0;
        }
    }
    out
}

impl FeatureExtractor for RandomPyramid {
    fn features(&self, image: &Array3<f64>) -> Vec<Array3<f64>> {
        let mut level = symmetric_gray(image);
        let mut maps = Vec::with_capacity(self.kernels.len());
        for bank in &self.kernels {
            let (c, h, w) = (bank.dim().0, level.dim().0, level.dim().1);
            let mut map = Array3::zeros((c, h, w));
            for ci in 0..c {
                let filtered = conv3_clamped(&level, &bank.index_axis(ndarray::Axis(0), ci));
                map.index_axis_mut(ndarray::Axis(0), ci).assign(&filtered.mapv(f64::tanh));
            }
            maps.push(map);
            level = avg_pool2(&level);
        }
        maps
    }
}

/// Trained-extractor variant: reuses a checkpoint's source-view encoder,
/// taking each conv stage's activation map as one scale.
pub struct EncoderFeatures<'a> {
    model: &'a Model,
}

impl<'a> EncoderFeatures<'a> {
    pub fn new(model: &'a Model) -> Self {
        EncoderFeatures { model }
    }
}

impl FeatureExtractor for EncoderFeatures<'_> {
    fn features(&self, image: &Array3<f64>) -> Vec<Array3<f64>> {
        self.model
            .denoiser
            .source_feature_maps(&self.model.params, &image_to_latent(image))
    }
}

/// Per-site unit normalization: each spatial position's channel vector is
/// scaled to unit length (zero vectors stay zero).
fn unit_normalize(map: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = map.dim();
    let mut out = map.clone();
    for y in 0..h {
        for x in 0..w {
            let norm = (0..c).map(|ci| map[(ci, y, x)] * map[(ci, y, x)]).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for ci in 0..c {
                    out[(ci, y, x)] /= norm;
                }
            }
        }
    }
    out
}

/// Mean over scales of the MSE between unit-normalized feature maps; zero
/// iff the features agree, symmetric by construction.
pub fn perceptual_distance(a: &Array3<f64>, b: &Array3<f64>, f: &dyn FeatureExtractor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let fa = f.features(a);
    let fb = f.features(b);
    debug_assert_eq!(fa.len(), fb.len(), "extractor returned inconsistent scale counts");
    let mut total = 0.0;
    for (ma, mb) in fa.iter().zip(&fb) {
        let na = unit_normalize(ma);
        let nb = unit_normalize(mb);
        let mse = na.iter().zip(nb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / na.len() as f64;
        total += mse;
    }
    Ok(total / fa.len() as f64)
}
