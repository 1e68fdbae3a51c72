//! Adaptive-moment optimizer with decoupled weight decay. The conditioning
//! parameters introduced on top of the backbone (modulation heads and
//! attention projections, see [`is_new_param`]) can take a scaled learning
//! rate and the backbone can be frozen outright for fine-tuning stages.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::super::net::{is_new_param, GradStore, ParamStore};

#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    new_lr_scale: f64,
    freeze_backbone: bool,
    steps: u32,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            new_lr_scale: 1.0,
            freeze_backbone: false,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Learning-rate multiplier for the new-parameter group.
    pub fn new_lr_scale(mut self, scale: f64) -> Self {
        self.new_lr_scale = scale;
        self
    }

    /// Skip every backbone parameter; only the new group moves.
    pub fn freeze_backbone(mut self, freeze: bool) -> Self {
        self.freeze_backbone = freeze;
        self
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    /// One update from accumulated gradients. Parameters without a gradient
    /// entry are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (name, grad) in grads.iter() {
            let is_new = is_new_param(name);
            if self.freeze_backbone && !is_new {
                continue;
            }
            let p = params.get_mut(name);
            assert_eq!(p.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let m = self.m.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let lr = self.lr * if is_new { self.new_lr_scale } else { 1.0 };
            for ((pi, gi), (mi, vi)) in p.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pi);
            }
        }
    }
}
