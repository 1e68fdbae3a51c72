//! Global conditioning pathways: sinusoidal timestep embedding with a
//! two-layer MLP, a relative-pose MLP, and a tiny strided-conv encoder that
//! turns the source image into one global vector. All three produce
//! `time_dim`-sized vectors that are summed into the per-view conditioning
//! signal.

use ndarray::{Array2, Array4, Axis};

use super::layers::{silu2, silu2_backward, silu4, silu4_backward, Conv2d, Linear};
use super::params::{GradStore, ParamSpec, ParamStore};

/// Classic transformer-style sinusoidal embedding of integer timesteps.
pub fn sinusoidal_embedding(timesteps: &[usize], dim: usize) -> Array2<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "sinusoidal dim must be even and ≥ 2");
    let half = dim / 2;
    let mut out = Array2::zeros((timesteps.len(), dim));
    for (row, &t) in timesteps.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / (half - 1).max(1) as f64).exp();
            let angle = t as f64 * freq;
            out[[row, 2 * i]] = angle.sin();
            out[[row, 2 * i + 1]] = angle.cos();
        }
    }
    out
}

/// Two-layer MLP over a fixed input: used for both the timestep and the
/// relative-pose pathways.
#[derive(Debug, Clone)]
pub struct EmbedMlp {
    l1: Linear,
    l2: Linear,
}

#[derive(Debug)]
pub struct EmbedMlpCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    a1: Array2<f64>,
}

impl EmbedMlp {
    pub fn new(name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        EmbedMlp {
            l1: Linear::new(format!("{name}.l1"), in_dim, hidden),
            l2: Linear::new(format!("{name}.l2"), hidden, out_dim),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.l1.specs();
        s.extend(self.l2.specs());
        s
    }

    pub fn forward(&self, ps: &ParamStore, input: &Array2<f64>) -> (Array2<f64>, EmbedMlpCache) {
        let h1 = self.l1.forward(ps, input);
        let a1 = silu2(&h1);
        let y = self.l2.forward(ps, &a1);
        (y, EmbedMlpCache { input: input.clone(), h1, a1 })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, ps: &ParamStore, cache: &EmbedMlpCache, gy: &Array2<f64>, gs: &mut GradStore) -> Array2<f64> {
        let d_a1 = self.l2.backward(ps, &cache.a1, gy, gs);
        let d_h1 = silu2_backward(&cache.h1, &d_a1);
        self.l1.backward(ps, &cache.input, &d_h1, gs)
    }
}

/// Four stride-2 convolutions, global mean pooling, and a linear projection:
/// compresses the source image into one `time_dim` vector.
#[derive(Debug, Clone)]
pub struct SourceEncoder {
    convs: Vec<Conv2d>,
    proj: Linear,
}

#[derive(Debug)]
pub struct SourceEncoderCache {
    /// Input to each conv.
    conv_inputs: Vec<Array4<f64>>,
    /// Pre-activation output of each conv.
    conv_outputs: Vec<Array4<f64>>,
    pooled: Array2<f64>,
    spatial: usize,
}

impl SourceEncoder {
    pub fn new(name: &str, in_ch: usize, channels: &[usize], out_dim: usize) -> Self {
        assert!(!channels.is_empty());
        let mut convs = Vec::new();
        let mut prev = in_ch;
        for (i, &ch) in channels.iter().enumerate() {
            convs.push(Conv2d::new(format!("{name}.conv{i}"), prev, ch, 3, 2, 1));
            prev = ch;
        }
        SourceEncoder { convs, proj: Linear::new(format!("{name}.proj"), prev, out_dim) }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s: Vec<ParamSpec> = self.convs.iter().flat_map(|c| c.specs()).collect();
        s.extend(self.proj.specs());
        s
    }

    /// Post-activation output of every conv stage, coarsening by 2× each
    /// level — the multi-scale feature stack reused by the perceptual
    /// metric's trained-extractor variant.
    pub fn stage_maps(&self, ps: &ParamStore, image: &Array4<f64>) -> Vec<Array4<f64>> {
        let mut maps = Vec::with_capacity(self.convs.len());
        let mut h = image.clone();
        for conv in &self.convs {
            h = silu4(&conv.forward(ps, &h));
            maps.push(h.clone());
        }
        maps
    }

    pub fn forward(&self, ps: &ParamStore, image: &Array4<f64>) -> (Array2<f64>, SourceEncoderCache) {
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_outputs = Vec::with_capacity(self.convs.len());
        let mut h = image.clone();
        for conv in &self.convs {
            conv_inputs.push(h.clone());
            let z = conv.forward(ps, &h);
            conv_outputs.push(z.clone());
            h = silu4(&z);
        }
        let (n, c, hh, ww) = h.dim();
        let spatial = hh * ww;
        let pooled = h
            .view()
            .into_shape_with_order((n, c, spatial))
            .unwrap()
            .mean_axis(Axis(2))
            .unwrap();
        let y = self.proj.forward(ps, &pooled);
        (y, SourceEncoderCache { conv_inputs, conv_outputs, pooled, spatial })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &SourceEncoderCache, gy: &Array2<f64>, gs: &mut GradStore) {
        let d_pooled = self.proj.backward(ps, &cache.pooled, gy, gs);
        let last = cache.conv_outputs.last().unwrap();
        let (n, c, hh, ww) = last.dim();
        let mut d_h = Array4::zeros((n, c, hh, ww));
        let scale = 1.0 / cache.spatial as f64;
        for ni in 0..n {
            for ci in 0..c {
                let g = d_pooled[[ni, ci]] * scale;
                d_h.slice_mut(ndarray::s![ni, ci, .., ..]).fill(g);
            }
        }
        for i in (0..self.convs.len()).rev() {
            let d_z = silu4_backward(&cache.conv_outputs[i], &d_h);
            d_h = self.convs[i].backward(ps, &cache.conv_inputs[i], &d_z, gs);
        }
    }
}
