//! DDPM noise schedule and process identities.
//!
//! Forward: `z_t = √ᾱ_t z_0 + √(1-ᾱ_t) ε` with `ᾱ_t = ∏_{s≤t} (1-β_s)`.
//! Backward: `z_{t-1} = (z_t − (1−α_t)/√(1−ᾱ_t) ε̂) / √α_t + σ_t ε_new`.
//! `t` is 1-indexed throughout, `t ∈ [1, T]`.

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sampling-time noise amplitude: zero (deterministic) or the DDPM
/// posterior `σ_t² = β_t (1-ᾱ_{t-1}) / (1-ᾱ_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    Zero,
    Posterior,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(SigmaMode::Zero),
            "posterior" => Ok(SigmaMode::Posterior),
            _ => Err(Error::Config(format!("sigma mode must be zero|posterior, got {s:?}"))),
        }
    }
}

impl SigmaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigmaMode::Zero => "zero",
            SigmaMode::Posterior => "posterior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas_posterior: Vec<f64>,
    mode: SigmaMode,
}

/// Linear β schedule from `beta_start` to `beta_end` over `t_steps` steps.
pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64, mode: SigmaMode) -> Result<DiffusionSchedule> {
    if t_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
        return Err(Error::Config(format!("need 0 < β_1 ≤ β_T < 1, got β_1={beta_start}, β_T={beta_end}")));
    }
    let mut betas = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        let frac = if t_steps == 1 { 0.0 } else { i as f64 / (t_steps - 1) as f64 };
        betas.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    // σ_1 = 0 because ᾱ_0 := 1.
    let mut sigmas_posterior = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
        sigmas_posterior.push((betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])).sqrt());
    }
    Ok(DiffusionSchedule { betas, alphas, alpha_bars, sigmas_posterior, mode })
}

impl DiffusionSchedule {
    pub fn t_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn mode(&self) -> SigmaMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: SigmaMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check(t);
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.check(t);
        self.alpha_bars[t - 1]
    }

    /// σ_t under the schedule's sampling mode.
    pub fn sigma(&self, t: usize) -> f64 {
        self.check(t);
        match self.mode {
            SigmaMode::Zero => 0.0,
            SigmaMode::Posterior => self.sigmas_posterior[t - 1],
        }
    }

    /// True when the terminal state is close to pure noise (ᾱ_T < 0.05);
    /// production schedules should satisfy this, toy single-step ones need
    /// not.
    pub fn is_well_mixed(&self) -> bool {
        *self.alpha_bars.last().unwrap() < 0.05
    }

    fn check(&self, t: usize) {
        assert!(t >= 1 && t <= self.betas.len(), "t = {t} outside schedule 1..={}", self.betas.len());
    }
}

/// Declarative schedule parameters; the serializable counterpart of
/// [`DiffusionSchedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { t_steps: 50, beta_start: 1e-3, beta_end: 0.13, sigma_mode: SigmaMode::Posterior }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.t_steps, self.beta_start, self.beta_end, self.sigma_mode)
    }

    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("sched.t_steps".into(), self.t_steps.to_string()),
            ("sched.beta_start".into(), self.beta_start.to_string()),
            ("sched.beta_end".into(), self.beta_end.to_string()),
            ("sched.sigma_mode".into(), self.sigma_mode.as_str().into()),
        ]
    }

    pub fn from_kv(reader: &mut crate::kv::KvReader) -> Result<Self> {
        let d = ScheduleConfig::default();
        Ok(ScheduleConfig {
            t_steps: reader.take_parsed("sched.t_steps")?.unwrap_or(d.t_steps),
            beta_start: reader.take_parsed("sched.beta_start")?.unwrap_or(d.beta_start),
            beta_end: reader.take_parsed("sched.beta_end")?.unwrap_or(d.beta_end),
            sigma_mode: match reader.take("sched.sigma_mode") {
                Some(s) => s.parse()?,
                None => d.sigma_mode,
            },
        })
    }
}

fn check_t(sched: &DiffusionSchedule, t: usize) -> Result<()> {
    if t < 1 || t > sched.t_steps() {
        return Err(Error::Config(format!("t = {t} outside schedule 1..={}", sched.t_steps())));
    }
    Ok(())
}

/// `z_t = √ᾱ_t z_0 + √(1-ᾱ_t) ε`.
pub fn forward_noise<D: Dimension>(z0: &Array<f64, D>, t: usize, eps: &Array<f64, D>, sched: &DiffusionSchedule) -> Result<Array<f64, D>> {
    check_t(sched, t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::shape(format!("{:?}", z0.shape()), format!("{:?}", eps.shape())));
    }
    let ab = sched.alpha_bar(t);
    Ok(z0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// One reverse step. `noise` is the fresh draw scaled by σ_t; it may be
/// omitted only when σ_t = 0.
pub fn backward_step<D: Dimension>(
    zt: &Array<f64, D>,
    t: usize,
    eps_hat: &Array<f64, D>,
    noise: Option<&Array<f64, D>>,
    sched: &DiffusionSchedule,
) -> Result<Array<f64, D>> {
    check_t(sched, t)?;
    if zt.shape() != eps_hat.shape() {
        return Err(Error::shape(format!("{:?}", zt.shape()), format!("{:?}", eps_hat.shape())));
    }
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let mut z = (zt - &(eps_hat * ((1.0 - alpha) / (1.0 - ab).sqrt()))) / alpha.sqrt();
    let sigma = sched.sigma(t);
    if sigma > 0.0 {
        let n = noise.ok_or_else(|| Error::Config("stochastic step requires a noise draw".into()))?;
        if n.shape() != zt.shape() {
            return Err(Error::shape(format!("{:?}", zt.shape()), format!("{:?}", n.shape())));
        }
        z = z + &(n * sigma);
    }
    Ok(z)
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)`, returning `(z_t, t, ε)`.
pub fn training_pair<D: Dimension, R: Rng>(
    z0: &Array<f64, D>,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> (Array<f64, D>, usize, Array<f64, D>) {
    let t = rng.gen_range(1..=sched.t_steps());
    let eps = Array::from_shape_simple_fn(z0.raw_dim(), || rng.sample(StandardNormal));
    let zt = forward_noise(z0, t, &eps, sched).expect("shapes match by construction");
    (zt, t, eps)
}

/// Multi-view variant: one shared `t` for all views of an instance, fresh
/// `ε` per view.
pub fn training_pairs_shared_t<D: Dimension, R: Rng>(
    views: &[Array<f64, D>],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> (Vec<Array<f64, D>>, usize, Vec<Array<f64, D>>) {
    let t = rng.gen_range(1..=sched.t_steps());
    let mut zts = Vec::with_capacity(views.len());
    let mut epss = Vec::with_capacity(views.len());
    for z0 in views {
        let eps = Array::from_shape_simple_fn(z0.raw_dim(), || rng.sample(StandardNormal));
        zts.push(forward_noise(z0, t, &eps, sched).expect("shapes match by construction"));
        epss.push(eps);
    }
    (zts, t, epss)
}
