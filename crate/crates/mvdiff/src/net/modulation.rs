//! Ray-conditioned normalization: layer-norm whose affine parameters are
//! predicted per pixel from the view's ray embedding.
//!
//! `y = LN(x) · (1 + γ) + β`, with `(γ, β)` produced by a shared two-layer
//! per-pixel MLP over the Fourier ray features. The MLP's output layer is
//! zero-initialized, so a fresh layer computes plain layer-norm and the
//! network's initial function is independent of the camera pathway.

use ndarray::{s, Array2, Array3, Array4};

use super::layers::{silu2, silu2_backward, site_ln, site_ln_backward, Linear};
use super::params::{GradStore, ParamSpec, ParamStore};

#[derive(Debug, Clone)]
pub struct RayModulation {
    pub name: String,
    pub feat_dim: usize,
    pub hidden: usize,
    pub channels: usize,
    l1: Linear,
    l2: Linear,
}

#[derive(Debug)]
pub struct ModCache {
    xhat: Array4<f64>,
    inv_std: Array3<f64>,
    /// Ray features as rows, (N·H·W, F): MLP input.
    feat_rows: Array2<f64>,
    h1: Array2<f64>,
    a1: Array2<f64>,
    /// Predicted (γ, β) as (N, 2C, H, W).
    gamma_beta: Array4<f64>,
}

impl RayModulation {
    pub fn new(name: impl Into<String>, feat_dim: usize, hidden: usize, channels: usize) -> Self {
        let name = name.into();
        let l1 = Linear::new(format!("{name}.l1"), feat_dim, hidden);
        let l2 = Linear::new(format!("{name}.l2"), hidden, 2 * channels).zero_init();
        RayModulation { name, feat_dim, hidden, channels, l1, l2 }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.l1.specs();
        v.extend(self.l2.specs());
        v
    }

    /// x: (N, C, H, W); feats: (N, F, H, W) ray embeddings at the same
    /// resolution.
    pub fn forward(&self, ps: &ParamStore, x: &Array4<f64>, feats: &Array4<f64>) -> (Array4<f64>, ModCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "{}: channels", self.name);
        assert_eq!(
            feats.dim(),
            (n, self.feat_dim, h, w),
            "{}: ray features must be re-derived at the feature resolution",
            self.name
        );
        let (xhat, inv_std) = site_ln(x);
        let feat_rows = feats
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_shape_with_order((n * h * w, self.feat_dim))
            .unwrap()
            .to_owned();
        let h1 = self.l1.forward(ps, &feat_rows);
        let a1 = silu2(&h1);
        let gb_rows = self.l2.forward(ps, &a1);
        let gamma_beta = gb_rows
            .into_shape_with_order((n, h, w, 2 * c))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned();
        let gamma = gamma_beta.slice(s![.., ..c, .., ..]);
        let beta = gamma_beta.slice(s![.., c.., .., ..]);
        let y = &xhat * &(&gamma + 1.0) + &beta;
        (y, ModCache { xhat, inv_std, feat_rows, h1, a1, gamma_beta })
    }

    /// Accumulates MLP parameter gradients and returns ∂loss/∂x. Ray
    /// features are pure inputs, so no gradient flows out of them.
    pub fn backward(&self, ps: &ParamStore, cache: &ModCache, gy: &Array4<f64>, gs: &mut GradStore) -> Array4<f64> {
        let (n, c, h, w) = cache.xhat.dim();
        let gamma = cache.gamma_beta.slice(s![.., ..c, .., ..]);
        // y = x̂(1+γ) + β.
        let d_xhat = gy * &(&gamma + 1.0);
        let d_gamma = gy * &cache.xhat;
        let mut d_gb = Array4::zeros((n, 2 * c, h, w));
        d_gb.slice_mut(s![.., ..c, .., ..]).assign(&d_gamma);
        d_gb.slice_mut(s![.., c.., .., ..]).assign(gy);
        let d_gb_rows = d_gb
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_shape_with_order((n * h * w, 2 * c))
            .unwrap()
            .to_owned();
        let d_a1 = self.l2.backward(ps, &cache.a1, &d_gb_rows, gs);
        let d_h1 = silu2_backward(&cache.h1, &d_a1);
        let _ = self.l1.backward(ps, &cache.feat_rows, &d_h1, gs);
        site_ln_backward(&cache.xhat, &cache.inv_std, &d_xhat)
    }
}
