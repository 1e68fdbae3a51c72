//! Image ↔ latent conversion. The diffusion process runs on channel-first
//! tensors in [-1, 1]; rendered and decoded images are (h, w, 3) in [0, 1].

use ndarray::Array3;

/// (h, w, 3) image in [0, 1] → (3, h, w) latent in [-1, 1].
pub fn image_to_latent(img: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let mut out = Array3::zeros((c, h, w));
    for yi in 0..h {
        for xi in 0..w {
            for ci in 0..c {
                out[[ci, yi, xi]] = 2.0 * img[[yi, xi, ci]] - 1.0;
            }
        }
    }
    out
}

/// (3, h, w) latent → (h, w, 3) image, clamped to [0, 1].
pub fn latent_to_image(z: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = z.dim();
    let mut out = Array3::zeros((h, w, c));
    for yi in 0..h {
        for xi in 0..w {
            for ci in 0..c {
                out[[yi, xi, ci]] = ((z[[ci, yi, xi]] + 1.0) / 2.0).clamp(0.0, 1.0);
            }
        }
    }
    out
}
