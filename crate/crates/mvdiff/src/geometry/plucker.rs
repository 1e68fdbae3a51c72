//! Plücker ray encoding and its Fourier feature embedding.
//!
//! A ray with origin `o` and unit direction `d` is encoded as
//! `r = (m, d) ∈ ℝ⁶` with moment `m = o × d`. The encoding is invariant to
//! sliding the origin along the ray: `(o + λd) × d = o × d`, so it identifies
//! the line itself, which is what per-pixel conditioning needs.

use nalgebra::Vector3;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Plücker coordinates of an oriented ray. `direction` is unit length and
/// `moment · direction = 0` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerRay {
    pub moment: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl PluckerRay {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.moment.x,
            self.moment.y,
            self.moment.z,
            self.direction.x,
            self.direction.y,
            self.direction.z,
        ]
    }
}

/// Encodes a ray. The direction is normalized first; a zero-length direction
/// has no line associated with it and is rejected.
pub fn plucker_encode(origin: &Vector3<f64>, direction: &Vector3<f64>) -> Result<PluckerRay> {
    let norm = direction.norm();
    if norm < 1e-12 {
        return Err(Error::Degenerate("zero-length ray direction".into()));
    }
    let d = direction / norm;
    Ok(PluckerRay { moment: origin.cross(&d), direction: d })
}

/// Frequencies for the sinusoidal embedding, shared by all six ray
/// components. Strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierConfig {
    freqs: Vec<f64>,
}

impl FourierConfig {
    /// `bands` frequencies equally spaced from 1 to `max_freq`.
    pub fn new(bands: usize, max_freq: f64) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Config("fourier bands must be >= 1".into()));
        }
        if bands > 1 && max_freq <= 1.0 {
            return Err(Error::Config(format!("max frequency must exceed 1, got {max_freq}")));
        }
        let freqs = (0..bands)
            .map(|i| {
                if bands == 1 {
                    1.0
                } else {
                    1.0 + (max_freq - 1.0) * i as f64 / (bands - 1) as f64
                }
            })
            .collect();
        Ok(Self { freqs })
    }

    /// Frequencies spanning 1 to the Nyquist rate of a pixel grid (half the
    /// larger grid dimension).
    pub fn for_grid(width: usize, height: usize, bands: usize) -> Result<Self> {
        Self::new(bands, width.max(height) as f64 / 2.0)
    }

    pub fn bands(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Output length of `fourier_embed` for an `n`-dimensional input.
    pub fn embedded_len(&self, n: usize) -> usize {
        n * (2 * self.bands() + 1)
    }
}

/// `[r, sin(f₁πr), cos(f₁πr), …, sin(f_Kπr), cos(f_Kπr)]`, blocks of the
/// input dimension each. The first block is the raw input.
pub fn fourier_embed(r: &[f64], cfg: &FourierConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.embedded_len(r.len()));
    out.extend_from_slice(r);
    for &f in &cfg.freqs {
        for &x in r {
            out.push((f * std::f64::consts::PI * x).sin());
        }
        for &x in r {
            out.push((f * std::f64::consts::PI * x).cos());
        }
    }
    out
}

/// Per-pixel rays of a camera plus their embedded features.
#[derive(Debug, Clone)]
pub struct RayMap {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<PluckerRay>,
    /// `(height, width, feature)` with feature length `6·(2K+1)`.
    pub features: Array3<f64>,
}

impl RayMap {
    pub fn ray(&self, u: usize, v: usize) -> &PluckerRay {
        &self.rays[v * self.width + u]
    }

    /// Features rearranged to `(feature, height, width)` for channel concat.
    pub fn features_chw(&self) -> Array3<f64> {
        let (h, w, f) = self.features.dim();
        let mut out = Array3::zeros((f, h, w));
        for y in 0..h {
            for x in 0..w {
                for c in 0..f {
                    out[(c, y, x)] = self.features[(y, x, c)];
                }
            }
        }
        out
    }
}

/// Embedded ray map over the camera's full pixel grid, row major.
pub fn ray_map(cam: &Camera, cfg: &FourierConfig) -> Result<RayMap> {
    let (w, h) = (cam.width(), cam.height());
    let flen = cfg.embedded_len(6);
    let mut rays = Vec::with_capacity(w * h);
    let mut features = Array3::zeros((h, w, flen));
    for v in 0..h {
        for u in 0..w {
            let (o, d) = cam.pixel_ray(u, v);
            let ray = plucker_encode(&o, &d)?;
            let emb = fourier_embed(&ray.as_array(), cfg);
            for (c, val) in emb.iter().enumerate() {
                features[(v, u, c)] = *val;
            }
            rays.push(ray);
        }
    }
    Ok(RayMap { width: w, height: h, rays, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orbit_camera, Intrinsics, OrbitPose};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn shift_invariance_along_direction() {
        let mut rng = crate::rng::stream(31);
        for _ in 0..50 {
            let o = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let base = plucker_encode(&o, &d).unwrap();
            for lambda in [-3.0, 0.5, 10.0] {
                let shifted = plucker_encode(&(o + d * lambda), &d).unwrap();
                assert_relative_eq!(shifted.moment, base.moment, epsilon = 1e-9);
                assert_eq!(shifted.direction, base.direction);
            }
        }
    }

    #[test]
    fn moment_orthogonal_to_direction() {
        let mut rng = crate::rng::stream(37);
        for _ in 0..100 {
            let o = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if d.norm() < 1e-3 {
                continue;
            }
            let ray = plucker_encode(&o, &d).unwrap();
            assert_relative_eq!(ray.moment.dot(&ray.direction), 0.0, epsilon = 1e-12);
            assert_relative_eq!(ray.direction.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_direction_rejected() {
        let err = plucker_encode(&Vector3::zeros(), &Vector3::zeros());
        assert!(matches!(err, Err(crate::error::Error::Degenerate(_))));
    }

    /// Scalar-loop oracle for the embedding, written independently of the
    /// block layout used by the implementation.
    fn embed_oracle(r: &[f64], freqs: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut out = vec![0.0; n * (2 * freqs.len() + 1)];
        out[..n].copy_from_slice(r);
        for (k, &f) in freqs.iter().enumerate() {
            for (i, &x) in r.iter().enumerate() {
                out[n + 2 * k * n + i] = (f * std::f64::consts::PI * x).sin();
                out[n + (2 * k + 1) * n + i] = (f * std::f64::consts::PI * x).cos();
            }
        }
        out
    }

    #[test]
    fn embedding_matches_scalar_oracle() {
        let cfg = FourierConfig::new(2, 5.0).unwrap();
        let r = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let got = fourier_embed(&r, &cfg);
        assert_eq!(got.len(), 30);
        let oracle = embed_oracle(&r, cfg.freqs());
        for (g, o) in got.iter().zip(&oracle) {
            assert_relative_eq!(g, o, epsilon = 1e-15);
        }

        let mut rng = crate::rng::stream(41);
        let cfg = FourierConfig::for_grid(32, 32, 6).unwrap();
        for _ in 0..20 {
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = fourier_embed(&r, &cfg);
            let oracle = embed_oracle(&r, cfg.freqs());
            assert_eq!(got.len(), 78);
            for (g, o) in got.iter().zip(&oracle) {
                assert_relative_eq!(g, o, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn six_band_embedding_is_78_dimensional_with_raw_prefix() {
        let cfg = FourierConfig::for_grid(32, 32, 6).unwrap();
        assert_eq!(cfg.embedded_len(6), 78);
        let r = [0.3, -0.7, 1.1, 0.0, 0.6, -0.2];
        let emb = fourier_embed(&r, &cfg);
        assert_eq!(emb.len(), 78);
        assert_eq!(&emb[..6], &r);
    }

    #[test]
    fn frequencies_strictly_increasing_from_one_to_nyquist() {
        let cfg = FourierConfig::for_grid(32, 32, 6).unwrap();
        let f = cfg.freqs();
        assert_relative_eq!(f[0], 1.0);
        assert_relative_eq!(*f.last().unwrap(), 16.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(FourierConfig::new(4, 0.5).is_err());
    }

    #[test]
    fn ray_map_shares_one_origin_and_embeds_every_pixel() {
        let intr = Intrinsics { fx: 16.0, fy: 16.0, cx: 8.0, cy: 8.0, width: 16, height: 16 };
        let cam = orbit_camera(&OrbitPose::new(0.4, 1.0, 2.0), &intr).unwrap();
        let cfg = FourierConfig::for_grid(16, 16, 6).unwrap();
        let map = ray_map(&cam, &cfg).unwrap();
        assert_eq!(map.rays.len(), 256);
        assert_eq!(map.features.dim(), (16, 16, 78));
        let c = cam.center();
        for ray in &map.rays {
            // moment = center × direction for every pixel of one camera.
            assert_relative_eq!(ray.moment, c.cross(&ray.direction), epsilon = 1e-9);
        }
        // Features at a probe pixel match a direct encode.
        let (o, d) = cam.pixel_ray(3, 9);
        let ray = plucker_encode(&o, &d).unwrap();
        let emb = fourier_embed(&ray.as_array(), &cfg);
        for (c, val) in emb.iter().enumerate() {
            assert_relative_eq!(map.features[(9, 3, c)], *val, epsilon = 1e-12);
        }
        // CHW transpose preserves values.
        let chw = map.features_chw();
        assert_relative_eq!(chw[(5, 9, 3)], map.features[(9, 3, 5)]);
    }
}
