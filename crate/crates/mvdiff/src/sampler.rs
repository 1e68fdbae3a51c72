//! Joint multi-view generation: classifier-free-guided backward diffusion
//! over all requested target views at once, plus 360° orbit rendering.
//!
//! Noise policy: every random draw comes from a stream keyed by the target
//! camera (and the run seed), so a view's noise does not depend on how the
//! request was batched or windowed. `shared` mode keys one stream off the
//! first camera and replicates its draws across views; `independent` mode
//! gives each view its own camera-keyed stream. Either way, sampling is a
//! pure function of (checkpoint, cameras, source, seed).

use ndarray::{s, Array3, Array5};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Model;
use crate::diffusion::{backward_step, DiffusionSchedule, ScheduleConfig, SigmaMode};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, OrbitPose, OrbitView};
use crate::kv::{parse_bool, KvReader};
use crate::latent::{image_to_latent, latent_to_image};
use crate::net::MultiViewBatch;
use crate::rng::{mix, mix_index, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// One z_T (and, when stochastic, one per-step noise draw) replicated
    /// across all views of the request.
    Shared,
    /// A separate camera-keyed noise stream per view.
    Independent,
}

impl NoiseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseMode::Shared => "shared",
            NoiseMode::Independent => "independent",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(NoiseMode::Shared),
            "independent" => Ok(NoiseMode::Independent),
            _ => Err(Error::Config(format!("noise mode must be shared|independent, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    /// Denoising steps; must equal the checkpoint schedule's step count.
    pub steps: usize,
    /// Classifier-free guidance scale (0 = unconditional).
    pub scale: f64,
    pub noise: NoiseMode,
    /// When false, σ is forced to zero and the backward pass is
    /// deterministic regardless of the checkpoint's σ mode.
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: 50, scale: 3.0, noise: NoiseMode::Shared, stochastic: true, seed: 0 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampling needs at least one step".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("guidance scale must be ≥ 0, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("sample.steps".into(), self.steps.to_string()),
            ("sample.scale".into(), self.scale.to_string()),
            ("sample.noise".into(), self.noise.as_str().into()),
            ("sample.stochastic".into(), self.stochastic.to_string()),
            ("sample.seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_kv(reader: &mut KvReader) -> Result<Self> {
        let d = SampleConfig::default();
        let cfg = SampleConfig {
            steps: reader.take_parsed("sample.steps")?.unwrap_or(d.steps),
            scale: reader.take_parsed("sample.scale")?.unwrap_or(d.scale),
            noise: match reader.take("sample.noise") {
                Some(s) => s.parse()?,
                None => d.noise,
            },
            stochastic: match reader.take("sample.stochastic") {
                Some(s) => parse_bool(&s)?,
                None => d.stochastic,
            },
            seed: reader.take_parsed("sample.seed")?.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One denoising step as seen by the guidance logic, recorded for
/// diagnostics and invariant tests.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub t: usize,
    /// Latents fed to the network at this step.
    pub z: Array5<f64>,
    pub eps_uncond: Array5<f64>,
    pub eps_cond: Array5<f64>,
    pub eps_guided: Array5<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SampleTrace {
    pub steps: Vec<TraceStep>,
}

/// Stable key for a camera's noise stream: a hash of its full calibration,
/// so equal cameras draw equal noise in any batching.
fn camera_key(cam: &Camera) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bits: u64| {
        h ^= bits;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for v in cam.k().iter().chain(cam.r().iter()).chain(cam.t().iter()) {
        eat(v.to_bits());
    }
    eat(cam.width() as u64);
    eat(cam.height() as u64);
    h
}

fn noise_stream(seed: u64, cam: &Camera) -> rand_chacha::ChaCha12Rng {
    stream(mix_index(mix(seed, "sample-view"), camera_key(cam)))
}

fn gaussian<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((c, h, w), || rng.sample(StandardNormal))
}

/// Initial z_T per view under the configured noise mode.
fn initial_noise(cfg: &SampleConfig, cameras: &[Camera], c: usize, h: usize, w: usize) -> Array5<f64> {
    let v = cameras.len();
    let mut z = Array5::zeros((1, v, c, h, w));
    match cfg.noise {
        NoiseMode::Shared => {
            let zt = gaussian(&mut noise_stream(cfg.seed, &cameras[0]), c, h, w);
            for vi in 0..v {
                z.slice_mut(s![0, vi, .., .., ..]).assign(&zt);
            }
        }
        NoiseMode::Independent => {
            for (vi, cam) in cameras.iter().enumerate() {
                let zt = gaussian(&mut noise_stream(cfg.seed, cam), c, h, w);
                z.slice_mut(s![0, vi, .., .., ..]).assign(&zt);
            }
        }
    }
    z
}

/// Schedule used for this request: the checkpoint's schedule, with σ
/// forced to zero when the request is deterministic.
fn request_schedule(model: &Model, cfg: &SampleConfig) -> Result<DiffusionSchedule> {
    if cfg.steps != model.sched_cfg.t_steps {
        return Err(Error::Config(format!(
            "requested {} steps but the checkpoint was trained with {}",
            cfg.steps, model.sched_cfg.t_steps
        )));
    }
    let mut sc: ScheduleConfig = model.sched_cfg.clone();
    if !cfg.stochastic {
        sc.sigma_mode = SigmaMode::Zero;
    }
    sc.build()
}

fn run_chain(
    model: &Model,
    sched: &DiffusionSchedule,
    source_image: &Array3<f64>,
    source_camera: &Camera,
    cameras: &[Camera],
    cfg: &SampleConfig,
    z_init: Array5<f64>,
    mut trace: Option<&mut SampleTrace>,
) -> Result<Array5<f64>> {
    let v = cameras.len();
    let (c, hh, ww) = {
        let d = z_init.dim();
        (d.2, d.3, d.4)
    };
    // Step-noise streams resume where z_T generation left off, so the whole
    // request reads one logical stream per view (or one total when shared).
    let mut step_rngs: Vec<rand_chacha::ChaCha12Rng> = match cfg.noise {
        NoiseMode::Shared => {
            let mut r = noise_stream(cfg.seed, &cameras[0]);
            let _ = gaussian(&mut r, c, hh, ww);
            vec![r]
        }
        NoiseMode::Independent => cameras
            .iter()
            .map(|cam| {
                let mut r = noise_stream(cfg.seed, cam);
                let _ = gaussian(&mut r, c, hh, ww);
                r
            })
            .collect(),
    };
    let mut batch = MultiViewBatch {
        latents: z_init,
        cameras: vec![cameras.to_vec()],
        source_cameras: vec![source_camera.clone()],
        source_latents: image_to_latent(source_image).insert_axis(ndarray::Axis(0)),
        timesteps: vec![sched.t_steps()],
    };
    for t in (1..=sched.t_steps()).rev() {
        batch.timesteps[0] = t;
        let eps_u = model.denoiser.forward(&model.params, &batch, &[true])?;
        let eps_c = model.denoiser.forward(&model.params, &batch, &[false])?;
        let eps_hat = &eps_u + &((&eps_c - &eps_u) * cfg.scale);
        if let Some(tr) = trace.as_deref_mut() {
            tr.steps.push(TraceStep {
                t,
                z: batch.latents.clone(),
                eps_uncond: eps_u,
                eps_cond: eps_c,
                eps_guided: eps_hat.clone(),
            });
        }
        let stochastic_step = sched.sigma(t) > 0.0;
        let shared_noise = if stochastic_step && cfg.noise == NoiseMode::Shared {
            Some(gaussian(&mut step_rngs[0], c, hh, ww))
        } else {
            None
        };
        let mut next = Array5::zeros(batch.latents.raw_dim());
        for vi in 0..v {
            let zt = batch.latents.slice(s![0, vi, .., .., ..]).to_owned();
            let eh = eps_hat.slice(s![0, vi, .., .., ..]).to_owned();
            let noise = if !stochastic_step {
                None
            } else {
                match cfg.noise {
                    NoiseMode::Shared => shared_noise.clone(),
                    NoiseMode::Independent => Some(gaussian(&mut step_rngs[vi], c, hh, ww)),
                }
            };
            let z_prev = backward_step(&zt, t, &eh, noise.as_ref(), sched)?;
            next.slice_mut(s![0, vi, .., .., ..]).assign(&z_prev);
        }
        batch.latents = next;
    }
    Ok(batch.latents)
}

fn finish_images(z0: &Array5<f64>) -> Vec<Array3<f64>> {
    (0..z0.dim().1)
        .map(|vi| latent_to_image(&z0.slice(s![0, vi, .., .., ..]).to_owned()))
        .collect()
}

fn validate_request(model: &Model, source_image: &Array3<f64>, cameras: &[Camera], cfg: &SampleConfig) -> Result<()> {
    cfg.validate()?;
    if cameras.is_empty() {
        return Err(Error::Config("sampling needs at least one target camera".into()));
    }
    let size = model.denoiser.config().image_size;
    if source_image.dim() != (size, size, 3) {
        return Err(Error::shape(format!("({size}, {size}, 3)"), format!("{:?}", source_image.dim())));
    }
    Ok(())
}

/// Generates one image per target camera from a single source view, all
/// denoised jointly through the same backward step sequence.
pub fn sample_views(
    model: &Model,
    source_image: &Array3<f64>,
    source_camera: &Camera,
    cameras: &[Camera],
    cfg: &SampleConfig,
) -> Result<Vec<Array3<f64>>> {
    validate_request(model, source_image, cameras, cfg)?;
    let sched = request_schedule(model, cfg)?;
    let lc = model.denoiser.config().latent_channels;
    let size = model.denoiser.config().image_size;
    let z_init = initial_noise(cfg, cameras, lc, size, size);
    let z0 = run_chain(model, &sched, source_image, source_camera, cameras, cfg, z_init, None)?;
    Ok(finish_images(&z0))
}

/// [`sample_views`] plus a per-step record of both guidance branches.
pub fn sample_views_traced(
    model: &Model,
    source_image: &Array3<f64>,
    source_camera: &Camera,
    cameras: &[Camera],
    cfg: &SampleConfig,
) -> Result<(Vec<Array3<f64>>, SampleTrace)> {
    validate_request(model, source_image, cameras, cfg)?;
    let sched = request_schedule(model, cfg)?;
    let lc = model.denoiser.config().latent_channels;
    let size = model.denoiser.config().image_size;
    let z_init = initial_noise(cfg, cameras, lc, size, size);
    let mut trace = SampleTrace::default();
    let z0 = run_chain(model, &sched, source_image, source_camera, cameras, cfg, z_init, Some(&mut trace))?;
    Ok((finish_images(&z0), trace))
}

/// A 360° ring of target poses around the scene at fixed elevation and
/// distance, anchored to one source view.
#[derive(Debug, Clone)]
pub struct OrbitRequest {
    pub source_image: Array3<f64>,
    pub source_camera: Camera,
    /// Intrinsics for the generated frames.
    pub intr: Intrinsics,
    /// Orbit elevation (radians) shared by every frame.
    pub theta: f64,
    /// Orbit distance shared by every frame.
    pub z: f64,
    /// One frame per azimuth, in order.
    pub azimuths: Vec<f64>,
    /// Joint-denoising window: frames per window, overlapping by one. Set
    /// this to the view count the attention stage was trained with.
    pub window: usize,
}

impl OrbitRequest {
    /// Uniform full-circle orbit: `frames` azimuths spaced 2π/frames apart.
    pub fn circle(
        source_image: Array3<f64>,
        source_camera: Camera,
        intr: Intrinsics,
        theta: f64,
        z: f64,
        frames: usize,
    ) -> Self {
        let azimuths = uniform_azimuths(frames);
        OrbitRequest { source_image, source_camera, intr, theta, z, azimuths, window: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuths.len() < 2 {
            return Err(Error::Config(format!("an orbit needs at least 2 frames, got {}", self.azimuths.len())));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("orbit window must be at least 2, got {}", self.window)));
        }
        if !(self.theta.is_finite() && self.z.is_finite() && self.z > 0.0) {
            return Err(Error::Config("orbit pose must be finite with positive distance".into()));
        }
        Ok(())
    }
}

pub fn uniform_azimuths(frames: usize) -> Vec<f64> {
    (0..frames).map(|i| i as f64 * std::f64::consts::TAU / frames as f64).collect()
}

/// Window start offsets covering `frames` items with `window`-sized windows
/// overlapping by one frame; the tail window is pulled back to end exactly
/// at the last frame.
fn window_starts(frames: usize, window: usize) -> Vec<usize> {
    debug_assert!(window >= 2);
    let w = window.min(frames);
    let mut starts = Vec::new();
    let mut begin = 0usize;
    loop {
        let b = begin.min(frames - w);
        starts.push(b);
        if b + w >= frames {
            break;
        }
        begin = b + (w - 1);
    }
    starts
}

#[derive(Debug, Clone)]
pub struct OrbitResult {
    /// One image per requested azimuth, in order.
    pub frames: Vec<Array3<f64>>,
    /// The camera trajectory matching `frames`.
    pub views: Vec<OrbitView>,
}

/// Renders the orbit in overlapping jointly-denoised windows (size =
/// `req.window`, stride = window − 1). σ is forced to zero so frames vary
/// only through their cameras, and each view's noise is keyed by its
/// camera, so the windowing never changes a frame's starting latent. Where
/// windows overlap, the first-computed frame wins.
pub fn render_orbit(model: &Model, req: &OrbitRequest, cfg: &SampleConfig) -> Result<OrbitResult> {
    req.validate()?;
    let views: Vec<OrbitView> = req
        .azimuths
        .iter()
        .map(|&phi| OrbitView { pose: OrbitPose::new(req.theta, phi, req.z), intr: req.intr })
        .collect();
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera()).collect::<Result<_>>()?;
    validate_request(model, &req.source_image, &cameras, cfg)?;
    let video_cfg = SampleConfig { stochastic: false, ..cfg.clone() };
    let sched = request_schedule(model, &video_cfg)?;
    let lc = model.denoiser.config().latent_channels;
    let size = model.denoiser.config().image_size;
    // Draw every frame's z_T up front; shared mode keys off the first frame
    // of the whole orbit so all windows reuse one latent.
    let z_all = initial_noise(&video_cfg, &cameras, lc, size, size);
    let n = cameras.len();
    let w = req.window.min(n);
    let mut frames: Vec<Option<Array3<f64>>> = vec![None; n];
    for start in window_starts(n, req.window) {
        let cams = &cameras[start..start + w];
        let z_init = z_all.slice(s![.., start..start + w, .., .., ..]).to_owned();
        let z0 = run_chain(model, &sched, &req.source_image, &req.source_camera, cams, &video_cfg, z_init, None)?;
        for (offset, img) in finish_images(&z0).into_iter().enumerate() {
            let slot = &mut frames[start + offset];
            if slot.is_none() {
                *slot = Some(img);
            }
        }
    }
    let frames = frames.into_iter().map(|f| f.expect("windows cover every frame")).collect();
    Ok(OrbitResult { frames, views })
}
