//! Cross-view attention: at every spatial site, single-head softmax
//! attention mixes the channel vectors of the views of one instance. No
//! information crosses between spatial locations — views are the sequence
//! axis. The output projection is zero-initialized so inserting the layer
//! into a trained backbone is a no-op until it learns.

use ndarray::{Array4, ArrayD, IxDyn};

use super::layers::{SiteNorm, SiteNormCache};
use super::params::{GradStore, Init, ParamSpec, ParamStore};

#[derive(Debug, Clone)]
pub struct ViewAttention {
    pub name: String,
    pub channels: usize,
    norm: SiteNorm,
}

#[derive(Debug)]
pub struct AttnCache {
    norm: SiteNormCache,
    /// Normalized input rows, (N·H·W, C), view-major within an instance.
    normed: Array4<f64>,
    q: Array4<f64>,
    k: Array4<f64>,
    v: Array4<f64>,
    /// Softmax weights per (instance, site): (B, H, W, v, v).
    attn: ArrayD<f64>,
    /// Attention output before the final projection, (N, C, H, W).
    mixed: Array4<f64>,
    views: usize,
}

impl ViewAttention {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        let norm = SiteNorm::new(format!("{name}.norm"), channels);
        ViewAttention { name, channels, norm }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let c = self.channels;
        let mut s = self.norm.specs();
        for proj in ["wq", "wk", "wv"] {
            s.push(ParamSpec::new(format!("{}.{proj}", self.name), vec![c, c], Init::FanIn { fan_in: c }));
        }
        s.push(ParamSpec::new(format!("{}.wo", self.name), vec![c, c], Init::Zeros));
        for bias in ["bq", "bk", "bv", "bo"] {
            s.push(ParamSpec::new(format!("{}.{bias}", self.name), vec![c], Init::Zeros));
        }
        s
    }

    fn proj(&self, ps: &ParamStore, x: &Array4<f64>, w: &str, b: &str) -> Array4<f64> {
        per_site_linear(x, ps.get(&format!("{}.{w}", self.name)), ps.get(&format!("{}.{b}", self.name)))
    }

    /// x: (N, C, H, W) with N = instances · views, views contiguous per
    /// instance. Returns x + proj(attention over views).
    pub fn forward(&self, ps: &ParamStore, x: &Array4<f64>, views: usize) -> (Array4<f64>, AttnCache) {
        let (n, c, h, w) = x.dim();
        assert!(views >= 1 && n % views == 0, "{}: batch {n} not divisible by views {views}", self.name);
        assert_eq!(c, self.channels);
        let b = n / views;
        let (normed, norm_cache) = self.norm.forward(ps, x);
        let q = self.proj(ps, &normed, "wq", "bq");
        let k = self.proj(ps, &normed, "wk", "bk");
        let v = self.proj(ps, &normed, "wv", "bv");
        let scale = 1.0 / (c as f64).sqrt();
        let mut attn = ArrayD::zeros(IxDyn(&[b, h, w, views, views]));
        let mut mixed = Array4::zeros((n, c, h, w));
        for bi in 0..b {
            for hi in 0..h {
                for wi in 0..w {
                    // Scores over views, then a stable softmax per query row.
                    for qi in 0..views {
                        let mut row = vec![0.0; views];
                        for ki in 0..views {
                            let mut dot = 0.0;
                            for ci in 0..c {
                                dot += q[[bi * views + qi, ci, hi, wi]] * k[[bi * views + ki, ci, hi, wi]];
                            }
                            row[ki] = dot * scale;
                        }
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut denom = 0.0;
                        for r in row.iter_mut() {
                            *r = (*r - max).exp();
                            denom += *r;
                        }
                        for (ki, r) in row.iter().enumerate() {
                            let a = r / denom;
                            attn[[bi, hi, wi, qi, ki]] = a;
                            for ci in 0..c {
                                mixed[[bi * views + qi, ci, hi, wi]] += a * v[[bi * views + ki, ci, hi, wi]];
                            }
                        }
                    }
                }
            }
        }
        let out = self.proj(ps, &mixed, "wo", "bo");
        let y = x + &out;
        (y, AttnCache { norm: norm_cache, normed, q, k, v, attn, mixed, views })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &AttnCache, gy: &Array4<f64>, gs: &mut GradStore) -> Array4<f64> {
        let (n, c, h, w) = cache.normed.dim();
        let views = cache.views;
        let b = n / views;
        let scale = 1.0 / (c as f64).sqrt();
        // y = x + wo·mixed + bo.
        let d_mixed = per_site_linear_backward(
            &cache.mixed,
            gy,
            ps.get(&format!("{}.wo", self.name)),
            &format!("{}.wo", self.name),
            &format!("{}.bo", self.name),
            gs,
        );
        let mut d_q = Array4::zeros((n, c, h, w));
        let mut d_k = Array4::zeros((n, c, h, w));
        let mut d_v = Array4::zeros((n, c, h, w));
        for bi in 0..b {
            for hi in 0..h {
                for wi in 0..w {
                    for qi in 0..views {
                        // dA then softmax-jacobian to get score gradients.
                        let mut d_a = vec![0.0; views];
                        for ki in 0..views {
                            let mut dot = 0.0;
                            for ci in 0..c {
                                dot += d_mixed[[bi * views + qi, ci, hi, wi]] * cache.v[[bi * views + ki, ci, hi, wi]];
                            }
                            d_a[ki] = dot;
                            let a = cache.attn[[bi, hi, wi, qi, ki]];
                            for ci in 0..c {
                                d_v[[bi * views + ki, ci, hi, wi]] += a * d_mixed[[bi * views + qi, ci, hi, wi]];
                            }
                        }
                        let mut inner = 0.0;
                        for ki in 0..views {
                            inner += d_a[ki] * cache.attn[[bi, hi, wi, qi, ki]];
                        }
                        for ki in 0..views {
                            let a = cache.attn[[bi, hi, wi, qi, ki]];
                            let d_s = a * (d_a[ki] - inner) * scale;
                            for ci in 0..c {
                                d_q[[bi * views + qi, ci, hi, wi]] += d_s * cache.k[[bi * views + ki, ci, hi, wi]];
                                d_k[[bi * views + ki, ci, hi, wi]] += d_s * cache.q[[bi * views + qi, ci, hi, wi]];
                            }
                        }
                    }
                }
            }
        }
        let mut d_normed = per_site_linear_backward(
            &cache.normed,
            &d_q,
            ps.get(&format!("{}.wq", self.name)),
            &format!("{}.wq", self.name),
            &format!("{}.bq", self.name),
            gs,
        );
        d_normed += &per_site_linear_backward(
            &cache.normed,
            &d_k,
            ps.get(&format!("{}.wk", self.name)),
            &format!("{}.wk", self.name),
            &format!("{}.bk", self.name),
            gs,
        );
        d_normed += &per_site_linear_backward(
            &cache.normed,
            &d_v,
            ps.get(&format!("{}.wv", self.name)),
            &format!("{}.wv", self.name),
            &format!("{}.bv", self.name),
            gs,
        );
        let d_x_norm = self.norm.backward(ps, &cache.norm, &d_normed, gs);
        d_x_norm + gy
    }
}

/// Applies `y[n,:,h,w] = W · x[n,:,h,w] + b` at every site (a 1×1 linear
/// over channels).
fn per_site_linear(x: &Array4<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> Array4<f64> {
    let (n, c, hh, ww) = x.dim();
    let cout = w.shape()[0];
    let w2 = w.view().into_shape_with_order((cout, c)).unwrap();
    let rows = x
        .view()
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_shape_with_order((n * hh * ww, c))
        .unwrap()
        .to_owned();
    let mut y = rows.dot(&w2.t());
    let b1 = b.view().into_shape_with_order(cout).unwrap();
    y += &b1;
    y.into_shape_with_order((n, hh, ww, cout))
        .unwrap()
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
}

/// Backward of [`per_site_linear`]: accumulates dW/db and returns dx.
fn per_site_linear_backward(
    x: &Array4<f64>,
    gy: &Array4<f64>,
    w: &ArrayD<f64>,
    w_name: &str,
    b_name: &str,
    gs: &mut GradStore,
) -> Array4<f64> {
    let (n, c, hh, ww) = x.dim();
    let cout = gy.dim().1;
    let w2 = w.view().into_shape_with_order((cout, c)).unwrap();
    let x_rows = x
        .view()
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_shape_with_order((n * hh * ww, c))
        .unwrap()
        .to_owned();
    let gy_rows = gy
        .view()
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_shape_with_order((n * hh * ww, cout))
        .unwrap()
        .to_owned();
    let dw = gy_rows.t().dot(&x_rows);
    gs.accumulate(w_name, dw.into_dyn().view());
    gs.accumulate(b_name, gy_rows.sum_axis(ndarray::Axis(0)).into_dyn().view());
    let dx = gy_rows.dot(&w2);
    dx.into_shape_with_order((n, hh, ww, c))
        .unwrap()
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
}

/// Reference per-site implementation used by the unit tests: explicit (v, C)
/// matrices at one site.
#[cfg(test)]
fn site_reference(
    ps: &ParamStore,
    attn: &ViewAttention,
    x_site: &ndarray::Array2<f64>, // (v, C) — already normalized input
) -> ndarray::Array2<f64> {
    let c = attn.channels;
    let get = |n: &str| {
        ps.get(&format!("{}.{n}", attn.name))
            .view()
            .into_shape_with_order(if n.starts_with('w') { (c, c) } else { (1, c) })
            .unwrap()
            .to_owned()
    };
    let q = x_site.dot(&get("wq").t()) + get("bq");
    let k = x_site.dot(&get("wk").t()) + get("bk");
    let v = x_site.dot(&get("wv").t()) + get("bv");
    let mut scores = q.dot(&k.t()) / (c as f64).sqrt();
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - max).exp());
        let denom = row.sum();
        row.mapv_inplace(|s| s / denom);
    }
    scores.dot(&v).dot(&get("wo").t()) + get("bo")
}
