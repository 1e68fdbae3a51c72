//! Differentiable building blocks: conv, linear, channel layer-norm, SiLU,
//! nearest-neighbor upsampling.
//!
//! Each layer is a descriptor (name + dims); weights live in a
//! [`ParamStore`]. `forward` consumes the input, `backward` takes whatever
//! `forward` cached (usually just the input) plus the output gradient,
//! accumulates parameter gradients, and returns the input gradient.
//! Convolutions run as im2col + matrix multiply; the column matrix is
//! rebuilt in backward rather than cached, trading a little compute for a
//! much smaller activation footprint.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};

use super::params::{GradStore, Init, ParamSpec, ParamStore};

/// ε inside every layer-norm denominator.
pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// im2col / col2im

/// Unfolds `x` (N, C, H, W) into (N·Ho·Wo, C·k·k) patch rows.
pub fn im2col(x: &Array4<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut cols = Array2::zeros((n * ho * wo, c * k * k));
    for ni in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (ni * ho + oy) * wo + ox;
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[row, (ci * k + ky) * k + kx]] = x[[ni, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into image layout.
pub fn col2im(cols: &Array2<f64>, dim: (usize, usize, usize, usize), k: usize, stride: usize, pad: usize) -> Array4<f64> {
    let (n, c, h, w) = dim;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut x = Array4::zeros(dim);
    for ni in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (ni * ho + oy) * wo + ox;
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x[[ni, ci, iy as usize, ix as usize]] += cols[[row, (ci * k + ky) * k + kx]];
                        }
                    }
                }
            }
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Conv2d

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub zero_init: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, k, stride, pad, zero_init: false }
    }

    pub fn zero_init(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let w_init = if self.zero_init {
            Init::Zeros
        } else {
            Init::FanIn { fan_in: self.in_ch * self.k * self.k }
        };
        vec![
            ParamSpec::new(format!("{}.w", self.name), vec![self.out_ch, self.in_ch, self.k, self.k], w_init),
            ParamSpec::new(format!("{}.b", self.name), vec![self.out_ch], Init::Zeros),
        ]
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "{}: input channels", self.name);
        let (ho, wo) = self.out_size(h, w);
        let cols = im2col(x, self.k, self.stride, self.pad);
        let ck2 = self.in_ch * self.k * self.k;
        let wt = ps.get(&format!("{}.w", self.name));
        let wf = wt.view().into_shape_with_order((self.out_ch, ck2)).unwrap();
        let b = ps.get(&format!("{}.b", self.name));
        let mut y2 = cols.dot(&wf.t());
        let b1 = b.view().into_shape_with_order(self.out_ch).unwrap();
        y2 += &b1;
        let y = y2.into_shape_with_order((n, ho, wo, self.out_ch)).unwrap();
        y.permuted_axes([0, 3, 1, 2]).as_standard_layout().to_owned()
    }

    /// `x` must be the same tensor passed to `forward`.
    pub fn backward(&self, ps: &ParamStore, x: &Array4<f64>, gy: &Array4<f64>, gs: &mut GradStore) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let (ho, wo) = self.out_size(h, w);
        assert_eq!(gy.dim(), (n, self.out_ch, ho, wo), "{}: grad shape", self.name);
        let ck2 = self.in_ch * self.k * self.k;
        let cols = im2col(x, self.k, self.stride, self.pad);
        let gyf = gy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_shape_with_order((n * ho * wo, self.out_ch))
            .unwrap()
            .to_owned();
        let dw = gyf.t().dot(&cols);
        let dw4 = dw.into_shape_with_order((self.out_ch, self.in_ch, self.k, self.k)).unwrap();
        gs.accumulate(&format!("{}.w", self.name), dw4.into_dyn().view());
        let db = gyf.sum_axis(Axis(0));
        gs.accumulate(&format!("{}.b", self.name), db.into_dyn().view());
        let wt = ps.get(&format!("{}.w", self.name));
        let wf = wt.view().into_shape_with_order((self.out_ch, ck2)).unwrap();
        let dcols = gyf.dot(&wf);
        col2im(&dcols, x.dim(), self.k, self.stride, self.pad)
    }
}

// ---------------------------------------------------------------------------
// Linear

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub zero_init: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim, zero_init: false }
    }

    pub fn zero_init(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let w_init = if self.zero_init { Init::Zeros } else { Init::FanIn { fan_in: self.in_dim } };
        vec![
            ParamSpec::new(format!("{}.w", self.name), vec![self.out_dim, self.in_dim], w_init),
            ParamSpec::new(format!("{}.b", self.name), vec![self.out_dim], Init::Zeros),
        ]
    }

    /// x: (N, in) → (N, out).
    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_dim, "{}: input dim", self.name);
        let w = ps.get(&format!("{}.w", self.name));
        let w2 = w.view().into_shape_with_order((self.out_dim, self.in_dim)).unwrap();
        let b = ps.get(&format!("{}.b", self.name));
        let b1 = b.view().into_shape_with_order(self.out_dim).unwrap();
        let mut y = x.dot(&w2.t());
        y += &b1;
        y
    }

    pub fn backward(&self, ps: &ParamStore, x: &Array2<f64>, gy: &Array2<f64>, gs: &mut GradStore) -> Array2<f64> {
        let dw = gy.t().dot(x);
        gs.accumulate(&format!("{}.w", self.name), dw.into_dyn().view());
        gs.accumulate(&format!("{}.b", self.name), gy.sum_axis(Axis(0)).into_dyn().view());
        let w = ps.get(&format!("{}.w", self.name));
        let w2 = w.view().into_shape_with_order((self.out_dim, self.in_dim)).unwrap();
        gy.dot(&w2)
    }
}

// ---------------------------------------------------------------------------
// SiLU

pub fn silu4(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub fn silu4_backward(x: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        let s = 1.0 / (1.0 + (-v).exp());
        *g *= s * (1.0 + v * (1.0 - s));
    });
    gx
}

pub fn silu2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub fn silu2_backward(x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        let s = 1.0 / (1.0 + (-v).exp());
        *g *= s * (1.0 + v * (1.0 - s));
    });
    gx
}

// ---------------------------------------------------------------------------
// Channel layer-norm at each spatial site

/// Normalizes over the channel axis independently at every (n, h, w) site:
/// returns x̂ and the per-site 1/√(var+ε) needed by the backward pass.
pub fn site_ln(x: &Array4<f64>) -> (Array4<f64>, Array3<f64>) {
    let (n, c, h, w) = x.dim();
    let mut xhat = Array4::zeros((n, c, h, w));
    let mut inv_std = Array3::zeros((n, h, w));
    for ni in 0..n {
        for hi in 0..h {
            for wi in 0..w {
                let mut mean = 0.0;
                for ci in 0..c {
                    mean += x[[ni, ci, hi, wi]];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ci in 0..c {
                    let d = x[[ni, ci, hi, wi]] - mean;
                    var += d * d;
                }
                var /= c as f64;
                let r = 1.0 / (var + LN_EPS).sqrt();
                inv_std[[ni, hi, wi]] = r;
                for ci in 0..c {
                    xhat[[ni, ci, hi, wi]] = (x[[ni, ci, hi, wi]] - mean) * r;
                }
            }
        }
    }
    (xhat, inv_std)
}

/// Input gradient given the gradient w.r.t. x̂.
pub fn site_ln_backward(xhat: &Array4<f64>, inv_std: &Array3<f64>, g_xhat: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = xhat.dim();
    let cf = c as f64;
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for hi in 0..h {
            for wi in 0..w {
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for ci in 0..c {
                    let g = g_xhat[[ni, ci, hi, wi]];
                    sum_g += g;
                    sum_gx += g * xhat[[ni, ci, hi, wi]];
                }
                let r = inv_std[[ni, hi, wi]];
                for ci in 0..c {
                    let g = g_xhat[[ni, ci, hi, wi]];
                    let xh = xhat[[ni, ci, hi, wi]];
                    gx[[ni, ci, hi, wi]] = r * (g - (sum_g + xh * sum_gx) / cf);
                }
            }
        }
    }
    gx
}

/// Layer-norm with a learned per-channel affine (γ init 1, β init 0), the
/// static counterpart of ray-conditioned modulation.
#[derive(Debug, Clone)]
pub struct SiteNorm {
    pub name: String,
    pub channels: usize,
}

#[derive(Debug)]
pub struct SiteNormCache {
    pub xhat: Array4<f64>,
    pub inv_std: Array3<f64>,
}

impl SiteNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        SiteNorm { name: name.into(), channels }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{}.g", self.name), vec![self.channels], Init::Ones),
            ParamSpec::new(format!("{}.b", self.name), vec![self.channels], Init::Zeros),
        ]
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array4<f64>) -> (Array4<f64>, SiteNormCache) {
        assert_eq!(x.dim().1, self.channels, "{}: channels", self.name);
        let (xhat, inv_std) = site_ln(x);
        let g = ps.get(&format!("{}.g", self.name));
        let b = ps.get(&format!("{}.b", self.name));
        let mut y = xhat.clone();
        for ci in 0..self.channels {
            let mut lane = y.slice_mut(s![.., ci, .., ..]);
            lane *= g[[ci]];
            lane += b[[ci]];
        }
        (y, SiteNormCache { xhat, inv_std })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &SiteNormCache, gy: &Array4<f64>, gs: &mut GradStore) -> Array4<f64> {
        let g = ps.get(&format!("{}.g", self.name));
        let mut dg = Array1::zeros(self.channels);
        let mut db = Array1::zeros(self.channels);
        let mut g_xhat = gy.clone();
        for ci in 0..self.channels {
            let gy_lane = gy.slice(s![.., ci, .., ..]);
            let xh_lane = cache.xhat.slice(s![.., ci, .., ..]);
            dg[ci] = (&gy_lane * &xh_lane).sum();
            db[ci] = gy_lane.sum();
            let mut lane = g_xhat.slice_mut(s![.., ci, .., ..]);
            lane *= g[[ci]];
        }
        gs.accumulate(&format!("{}.g", self.name), dg.into_dyn().view());
        gs.accumulate(&format!("{}.b", self.name), db.into_dyn().view());
        site_ln_backward(&cache.xhat, &cache.inv_std, &g_xhat)
    }
}

// ---------------------------------------------------------------------------
// Nearest-neighbor ×2 upsampling

pub fn upsample2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let v = x[[ni, ci, hi, wi]];
                    y[[ni, ci, 2 * hi, 2 * wi]] = v;
                    y[[ni, ci, 2 * hi, 2 * wi + 1]] = v;
                    y[[ni, ci, 2 * hi + 1, 2 * wi]] = v;
                    y[[ni, ci, 2 * hi + 1, 2 * wi + 1]] = v;
                }
            }
        }
    }
    y
}

pub fn upsample2_backward(gy: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    gx[[ni, ci, hi, wi]] = gy[[ni, ci, 2 * hi, 2 * wi]]
                        + gy[[ni, ci, 2 * hi, 2 * wi + 1]]
                        + gy[[ni, ci, 2 * hi + 1, 2 * wi]]
                        + gy[[ni, ci, 2 * hi + 1, 2 * wi + 1]];
                }
            }
        }
    }
    gx
}
