//! Peak signal-to-noise ratio between [0, 1] images.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Cap reported for identical images (MSE = 0 would be +∞ dB).
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    for (name, img) in [("first", a), ("second", b)] {
        if img.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) {
            return Err(Error::Metric(format!("{name} image leaves [0, 1]")));
        }
    }
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
