//! Structural similarity with the standard 11×11 Gaussian window
//! (σ = 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1, averaged over valid
//! window positions and channels.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *wi = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Separable valid-mode Gaussian blur of one channel plane.
fn blur_valid(plane: &Array2<f64>) -> Array2<f64> {
    let w = gaussian_window();
    let (h, wid) = plane.dim();
    let mut rows = Array2::zeros((h, wid - WINDOW + 1));
    for y in 0..h {
        for x in 0..wid - WINDOW + 1 {
            rows[(y, x)] = (0..WINDOW).map(|k| plane[(y, x + k)] * w[k]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((h - WINDOW + 1, wid - WINDOW + 1));
    for y in 0..h - WINDOW + 1 {
        for x in 0..wid - WINDOW + 1 {
            out[(y, x)] = (0..WINDOW).map(|k| rows[(y + k, x)] * w[k]).sum::<f64>();
        }
    }
    out
}

/// Mean structural similarity of two images in [0,1], shape (h, w,
/// channels). Errors when shapes differ or the image is smaller than the
/// 11×11 window.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let (h, w, chans) = a.dim();
    if h < WINDOW || w < WINDOW {
        return Err(Error::Metric(format!("ssim needs at least {WINDOW}×{WINDOW} pixels, got {h}×{w}")));
    }
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    for c in 0..chans {
        let pa = a.index_axis(ndarray::Axis(2), c).to_owned();
        let pb = b.index_axis(ndarray::Axis(2), c).to_owned();
        let mu_a = blur_valid(&pa);
        let mu_b = blur_valid(&pb);
        let mu_aa = blur_valid(&(&pa * &pa));
        let mu_bb = blur_valid(&(&pb * &pb));
        let mu_ab = blur_valid(&(&pa * &pb));
        let mut acc = 0.0;
        for ((y, x), &ma) in mu_a.indexed_iter() {
            let mb = mu_b[(y, x)];
            let va = mu_aa[(y, x)] - ma * ma;
            let vb = mu_bb[(y, x)] - mb * mb;
            let cov = mu_ab[(y, x)] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / chans as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn identical_images_score_one() {
        let mut rng = stream(1);
        let a: Array3<f64> = Array3::from_shape_simple_fn((16, 14, 3), || rng.gen_range(0.0..=1.0));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_match_the_closed_form_luminance_term() {
        // Zero variance and covariance: the structure term is exactly
        // C2/C2 = 1, leaving (2·μa·μb + C1)/(μa² + μb² + C1).
        let a = Array3::from_elem((12, 12, 3), 0.2);
        let b = Array3::from_elem((12, 12, 3), 0.7);
        let c1 = K1 * K1;
        let want = (2.0 * 0.2 * 0.7 + c1) / (0.2 * 0.2 + 0.7 * 0.7 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn symmetric_on_random_pairs() {
        let mut rng = stream(2);
        for _ in 0..10 {
            let a: Array3<f64> = Array3::from_shape_simple_fn((13, 17, 3), || rng.gen_range(0.0..=1.0));
            let b: Array3<f64> = Array3::from_shape_simple_fn((13, 17, 3), || rng.gen_range(0.0..=1.0));
            let ab = ssim(&a, &b).unwrap();
            assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&ab));
            assert!(ab < 1.0, "random pairs should not be structurally identical");
        }
    }

    #[test]
    fn degrades_with_noise() {
        let mut rng = stream(3);
        let a: Array3<f64> = Array3::from_shape_simple_fn((20, 20, 3), || rng.gen_range(0.2..0.8));
        let noisy = |amp: f64, rng: &mut rand_chacha::ChaCha12Rng| a.mapv(|x| (x + rng.gen_range(-amp..amp)).clamp(0.0, 1.0));
        let small = noisy(0.05, &mut rng);
        let large = noisy(0.3, &mut rng);
        assert!(ssim(&a, &small).unwrap() > ssim(&a, &large).unwrap());
    }

    #[test]
    fn rejects_small_or_mismatched_images() {
        let a = Array3::from_elem((10, 12, 3), 0.5);
        let b = Array3::from_elem((12, 12, 3), 0.5);
        assert!(matches!(ssim(&a, &a), Err(Error::Metric(_))));
        assert!(matches!(ssim(&b, &a), Err(Error::ShapeMismatch { .. })));
    }
}
