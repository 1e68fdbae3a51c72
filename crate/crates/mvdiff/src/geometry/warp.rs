//! Homography warping with bilinear sampling and a validity mask.

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Warps `image` (height, width, channels) by `h`, where `h` maps *input*
/// pixel coordinates to *output* pixel coordinates (the forward direction;
/// sampling happens through its inverse). Output pixels whose source falls
/// outside the full bilinear support of the input grid are zero-filled and
/// reported `false` in the mask.
pub fn warp_image(image: &Array3<f64>, h: &Matrix3<f64>) -> Result<(Array3<f64>, Array2<bool>)> {
    let (rows, cols, chans) = image.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::shape("non-empty image", format!("{rows}x{cols}")));
    }
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;

    let mut out = Array3::zeros((rows, cols, chans));
    let mut mask = Array2::from_elem((rows, cols), false);
    for v in 0..rows {
        for u in 0..cols {
            let dst = nalgebra::Vector3::new(u as f64 + 0.5, v as f64 + 0.5, 1.0);
            let src = h_inv * dst;
            if src.z.abs() < 1e-12 {
                continue;
            }
            let x = src.x / src.z;
            let y = src.y / src.z;
            // Full bilinear support: source must be within the pixel-center
            // hull [0.5, size - 0.5].
            if x < 0.5 || x > cols as f64 - 0.5 || y < 0.5 || y > rows as f64 - 0.5 {
                continue;
            }
            let xf = x - 0.5;
            let yf = y - 0.5;
            let x0 = xf.floor().min(cols as f64 - 1.0).max(0.0) as usize;
            let y0 = yf.floor().min(rows as f64 - 1.0).max(0.0) as usize;
            let x1 = (x0 + 1).min(cols - 1);
            let y1 = (y0 + 1).min(rows - 1);
            let ax = xf - x0 as f64;
            let ay = yf - y0 as f64;
            for c in 0..chans {
                let top = image[(y0, x0, c)] * (1.0 - ax) + image[(y0, x1, c)] * ax;
                let bot = image[(y1, x0, c)] * (1.0 - ax) + image[(y1, x1, c)] * ax;
                out[(v, u, c)] = top * (1.0 - ay) + bot * ay;
            }
            mask[(v, u)] = true;
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn checkerboard(n: usize, period: usize) -> Array3<f64> {
        let mut img = Array3::zeros((n, n, 3));
        for v in 0..n {
            for u in 0..n {
                let c = if (u / period + v / period) % 2 == 0 { 1.0 } else { 0.0 };
                for k in 0..3 {
                    img[(v, u, k)] = if k == 2 { 1.0 - c } else { c };
                }
            }
        }
        img
    }

    #[test]
    fn identity_warp_is_exact_with_full_mask() {
        let img = checkerboard(16, 4);
        let (out, mask) = warp_image(&img, &Matrix3::identity()).unwrap();
        assert_eq!(out, img);
        assert!(mask.iter().all(|&m| m));
    }

    /// Integer translation must equal an index-shifted copy.
    #[test]
    fn two_pixel_translation_matches_index_shift() {
        let img = checkerboard(16, 3);
        let mut h = Matrix3::identity();
        h[(0, 2)] = 2.0; // shift +2 in x
        let (out, mask) = warp_image(&img, &h).unwrap();
        for v in 0..16 {
            for u in 0..16 {
                if u < 2 {
                    assert!(!mask[(v, u)]);
                    assert_eq!(out[(v, u, 0)], 0.0);
                } else {
                    assert!(mask[(v, u)]);
                    for c in 0..3 {
                        assert_eq!(out[(v, u, c)], img[(v, u - 2, c)]);
                    }
                }
            }
        }
    }

    /// A 90° rotation about the image center maps pixel centers onto pixel
    /// centers, so bilinear sampling is exact against the analytic rotation.
    #[test]
    fn quarter_turn_matches_analytic_rotation() {
        let n = 12usize;
        let img = checkerboard(n, 2);
        let c = n as f64 / 2.0;
        // x' = c - (y - c), y' = c + (x - c)
        let h = Matrix3::new(0.0, -1.0, 2.0 * c, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let (out, mask) = warp_image(&img, &h).unwrap();
        assert!(mask.iter().all(|&m| m));
        for v in 0..n {
            for u in 0..n {
                // Destination (u, v) pulls from source (v, n-1-u).
                let src_u = v;
                let src_v = n - 1 - u;
                for ch in 0..3 {
                    assert_relative_eq!(out[(v, u, ch)], img[(src_v, src_u, ch)], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_is_masked_and_zero_filled() {
        let img = checkerboard(8, 2);
        let mut h = Matrix3::identity();
        h[(0, 2)] = 100.0;
        let (out, mask) = warp_image(&img, &h).unwrap();
        assert!(mask.iter().all(|&m| !m));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn singular_homography_rejected() {
        let img = checkerboard(8, 2);
        let h = Matrix3::zeros();
        assert!(matches!(warp_image(&img, &h), Err(crate::error::Error::Degenerate(_))));
    }
}
