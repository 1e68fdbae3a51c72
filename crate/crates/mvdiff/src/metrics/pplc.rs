//! Perceptual path-length consistency for a rendered camera path: for each
//! neighboring frame pair, the squared perceptual feature distance scaled
//! by 1/φ² (φ = angular camera gap), optionally after rectifying the
//! second frame onto the first through a plane-induced homography.
//!
//! Rectification removes the component of frame-to-frame change that pure
//! camera motion explains; what remains — and what this metric charges
//! for — is appearance drift, the signature of view-inconsistent
//! generation.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::geometry::{rectifying_homography, warp_image, Camera};
use crate::metrics::perceptual::{perceptual_distance, FeatureExtractor};

#[derive(Debug, Clone, PartialEq)]
pub struct PplcOptions {
    /// Warp each pair's second frame onto the first before comparing.
    pub rectify: bool,
    /// Depth of the rectification plane in front of the first camera.
    pub plane_depth: f64,
    /// Include the wrap-around pair (last, first) — the right choice for a
    /// full-circle orbit.
    pub closed: bool,
}

impl Default for PplcOptions {
    fn default() -> Self {
        PplcOptions { rectify: true, plane_depth: 2.0, closed: true }
    }
}

#[derive(Debug, Clone)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    /// Perceptual distance on the jointly valid region.
    pub raw: f64,
    /// Angular gap between the camera centers (radians).
    pub phi: f64,
    /// raw/φ², or `None` when the pair was skipped.
    pub score: Option<f64>,
    /// Fraction of pixels surviving the rectification mask (1 when not
    /// rectifying).
    pub coverage: f64,
    /// Why the pair was skipped, when it was.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PplcReport {
    pub pairs: Vec<PairScore>,
    /// Mean score over the scored (non-skipped) pairs.
    pub mean: f64,
    pub rectified: bool,
    pub closed: bool,
}

impl PplcReport {
    /// One CSV row per pair plus a trailing summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,raw,phi,score,coverage,note\n");
        for p in &self.pairs {
            let score = p.score.map(|s| format!("{s:.8e}")).unwrap_or_default();
            let note = p.note.as_deref().unwrap_or("");
            out.push_str(&format!("{}-{},{:.8e},{:.8e},{score},{:.4},{note}\n", p.i, p.j, p.raw, p.phi, p.coverage));
        }
        let scored = self.pairs.iter().filter(|p| p.score.is_some()).count();
        out.push_str(&format!(
            "summary,mean={:.8e},scored={scored},skipped={},rectified={},closed={}\n",
            self.mean,
            self.pairs.len() - scored,
            self.rectified,
            self.closed
        ));
        out
    }
}

fn angular_gap(a: &Camera, b: &Camera) -> f64 {
    let ua = a.center().normalize();
    let ub = b.center().normalize();
    ua.dot(&ub).clamp(-1.0, 1.0).acos()
}

fn apply_mask(image: &Array3<f64>, mask: &ndarray::Array2<bool>) -> Array3<f64> {
    let mut out = image.clone();
    for ((y, x), &ok) in mask.indexed_iter() {
        if !ok {
            for c in 0..out.dim().2 {
                out[(y, x, c)] = 0.0;
            }
        }
    }
    out
}

/// Scores every neighboring pair of the path. Pairs whose rectification is
/// degenerate, or whose cameras coincide while the frames differ, are
/// skipped and reported rather than scored.
pub fn pplc(
    frames: &[Array3<f64>],
    cameras: &[Camera],
    f: &dyn FeatureExtractor,
    opts: &PplcOptions,
) -> Result<PplcReport> {
    if frames.len() < 2 {
        return Err(Error::Metric(format!("pplc needs at least 2 frames, got {}", frames.len())));
    }
    if frames.len() != cameras.len() {
        return Err(Error::Metric(format!("{} frames but {} cameras", frames.len(), cameras.len())));
    }
    let n = frames.len();
    let mut pair_indices: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if opts.closed {
        pair_indices.push((n - 1, 0));
    }
    let mut pairs = Vec::with_capacity(pair_indices.len());
    for (i, j) in pair_indices {
        let phi = angular_gap(&cameras[i], &cameras[j]);
        // Coincident cameras: identical frames are perfectly consistent;
        // distinct frames have no angular gap to normalize by, so the pair
        // cannot be scored. acos near 1 resolves no finer than ~1e-8 even
        // for bit-identical centers, hence the loose threshold.
        if phi < 1e-7 {
            let (raw, score, note) = if frames[i] == frames[j] {
                (0.0, Some(0.0), None)
            } else {
                (f64::NAN, None, Some("zero angular gap between distinct frames".to_string()))
            };
            pairs.push(PairScore { i, j, raw, phi, score, coverage: 1.0, note });
            continue;
        }
        let (a, b, coverage, note) = if opts.rectify {
            match rectifying_homography(&cameras[i], &cameras[j], opts.plane_depth)
                .and_then(|h| warp_image(&frames[j], &h))
            {
                Ok((warped, mask)) => {
                    let coverage = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
                    (apply_mask(&frames[i], &mask), apply_mask(&warped, &mask), coverage, None)
                }
                Err(e) => {
                    pairs.push(PairScore { i, j, raw: f64::NAN, phi, score: None, coverage: 0.0, note: Some(e.to_string()) });
                    continue;
                }
            }
        } else {
            (frames[i].clone(), frames[j].clone(), 1.0, None)
        };
        let raw = perceptual_distance(&a, &b, f)?;
        pairs.push(PairScore { i, j, raw, phi, score: Some(raw / (phi * phi)), coverage, note });
    }
    let scored: Vec<f64> = pairs.iter().filter_map(|p| p.score).collect();
    if scored.is_empty() {
        return Err(Error::Metric("every pair was skipped; no consistency score available".into()));
    }
    let mean = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(PplcReport { pairs, mean, rectified: opts.rectify, closed: opts.closed })
}
