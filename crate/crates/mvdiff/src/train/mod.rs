//! Two-stage training: denoising-score matching (`‖ε − ε̂‖²`) over
//! multi-view batches.
//!
//! Stage `rcn_only` trains backbone + ray conditioning on single random
//! (source, target) pairs. Stage `attention` trains on the N nearest views
//! of a random anchor, all sharing one timestep, optionally freezing the
//! backbone; the new-parameter group (modulation heads, attention
//! projections) takes a scaled learning rate throughout.

pub mod optim;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array4, Array5, Dimension, Ix5};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Model;
use crate::diffusion::{forward_noise, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::kv::{parse_bool, KvReader};
use crate::latent::{image_to_latent, latent_to_image};
use crate::metrics::psnr;
use crate::net::{Denoiser, GradStore, MultiViewBatch, ParamStore};
use crate::rng::{mix, stream};
use crate::scene::{LoadedDataset, SceneRecord, Split};

pub use optim::AdamW;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Backbone + ray conditioning, one random target per instance.
    RcnOnly,
    /// Cross-view attention on nearest-view groups with a shared timestep.
    Attention,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::RcnOnly => "rcn_only",
            Stage::Attention => "attention",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rcn_only" => Ok(Stage::RcnOnly),
            "attention" => Ok(Stage::Attention),
            _ => Err(Error::Config(format!("stage must be rcn_only|attention, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    /// Instances per optimization step.
    pub batch_size: usize,
    /// Views per instance in the attention stage.
    pub views: usize,
    pub lr: f64,
    /// Learning-rate multiplier for the new-parameter group.
    pub new_lr_scale: f64,
    pub weight_decay: f64,
    /// Probability of dropping (source latent, pose, rays) per instance.
    pub cond_drop: f64,
    pub seed: u64,
    pub freeze_backbone: bool,
    /// Per-scene view indices reserved for evaluation (taken from the end).
    pub holdout_views: usize,
    /// Evaluate reconstruction PSNR every this many steps (0 = never).
    pub eval_every: usize,
    pub eval_pairs: usize,
    /// Timestep used for eval reconstructions, as a fraction of T.
    pub eval_t_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::RcnOnly,
            steps: 200,
            batch_size: 2,
            views: 4,
            lr: 1e-4,
            new_lr_scale: 10.0,
            weight_decay: 0.0,
            cond_drop: 0.1,
            seed: 0,
            freeze_backbone: false,
            holdout_views: 0,
            eval_every: 0,
            eval_pairs: 8,
            eval_t_frac: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.views == 0 || self.eval_pairs == 0 {
            return Err(Error::Config("batch size, view count, and eval pairs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.new_lr_scale > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("new_lr_scale must be positive and weight_decay nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.cond_drop) {
            return Err(Error::Config(format!("cond_drop must be in [0, 1), got {}", self.cond_drop)));
        }
        if !(self.eval_t_frac > 0.0 && self.eval_t_frac <= 1.0) {
            return Err(Error::Config(format!("eval_t_frac must be in (0, 1], got {}", self.eval_t_frac)));
        }
        Ok(())
    }

    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("train.stage".into(), self.stage.as_str().into()),
            ("train.steps".into(), self.steps.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.views".into(), self.views.to_string()),
            ("train.lr".into(), self.lr.to_string()),
            ("train.new_lr_scale".into(), self.new_lr_scale.to_string()),
            ("train.weight_decay".into(), self.weight_decay.to_string()),
            ("train.cond_drop".into(), self.cond_drop.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.freeze_backbone".into(), self.freeze_backbone.to_string()),
            ("train.holdout_views".into(), self.holdout_views.to_string()),
            ("train.eval_every".into(), self.eval_every.to_string()),
            ("train.eval_pairs".into(), self.eval_pairs.to_string()),
            ("train.eval_t_frac".into(), self.eval_t_frac.to_string()),
        ]
    }

    pub fn from_kv(reader: &mut KvReader) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            stage: match reader.take("train.stage") {
                Some(s) => s.parse()?,
                None => d.stage,
            },
            steps: reader.take_parsed("train.steps")?.unwrap_or(d.steps),
            batch_size: reader.take_parsed("train.batch_size")?.unwrap_or(d.batch_size),
            views: reader.take_parsed("train.views")?.unwrap_or(d.views),
            lr: reader.take_parsed("train.lr")?.unwrap_or(d.lr),
            new_lr_scale: reader.take_parsed("train.new_lr_scale")?.unwrap_or(d.new_lr_scale),
            weight_decay: reader.take_parsed("train.weight_decay")?.unwrap_or(d.weight_decay),
            cond_drop: reader.take_parsed("train.cond_drop")?.unwrap_or(d.cond_drop),
            seed: reader.take_parsed("train.seed")?.unwrap_or(d.seed),
            freeze_backbone: match reader.take("train.freeze_backbone") {
                Some(s) => parse_bool(&s)?,
                None => d.freeze_backbone,
            },
            holdout_views: reader.take_parsed("train.holdout_views")?.unwrap_or(d.holdout_views),
            eval_every: reader.take_parsed("train.eval_every")?.unwrap_or(d.eval_every),
            eval_pairs: reader.take_parsed("train.eval_pairs")?.unwrap_or(d.eval_pairs),
            eval_t_frac: reader.take_parsed("train.eval_t_frac")?.unwrap_or(d.eval_t_frac),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Indices of the `n` views whose camera centers are closest to the
/// anchor's by great-circle angle, anchor first, ties broken by index.
pub fn nearest_views(cameras: &[Camera], anchor: usize, n: usize) -> Result<Vec<usize>> {
    if anchor >= cameras.len() {
        return Err(Error::Config(format!("anchor {anchor} out of range for {} views", cameras.len())));
    }
    if n > cameras.len() {
        return Err(Error::Config(format!("requested {n} views from a set of {}", cameras.len())));
    }
    let unit = |c: &Camera| {
        let p = c.center();
        p / p.norm()
    };
    let a = unit(&cameras[anchor]);
    let mut order: Vec<(f64, usize)> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| (unit(c).dot(&a).clamp(-1.0, 1.0).acos(), i))
        .collect();
    order.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    Ok(order.into_iter().take(n).map(|(_, i)| i).collect())
}

/// One assembled optimization batch: noisy latents with their noise targets
/// and the per-instance conditioning-drop mask.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub batch: MultiViewBatch,
    pub eps: ndarray::Array<f64, Ix5>,
    pub drop: Vec<bool>,
}

fn usable_views(data: &LoadedDataset, cfg: &TrainConfig) -> Result<usize> {
    let total = data.manifest.views_per_scene;
    if cfg.holdout_views >= total {
        return Err(Error::Config(format!("holdout {} leaves no training views of {total}", cfg.holdout_views)));
    }
    let usable = total - cfg.holdout_views;
    let needed = match cfg.stage {
        Stage::RcnOnly => 2,
        Stage::Attention => cfg.views + 1,
    };
    if usable < needed {
        return Err(Error::Config(format!(
            "stage {} needs {needed} usable views per scene, have {usable}",
            cfg.stage.as_str()
        )));
    }
    Ok(usable)
}

/// Draws one training batch: scene, source view, target view(s), shared
/// timestep per instance, fresh noise per view, conditioning-drop mask.
pub fn assemble_batch<R: Rng>(
    data: &LoadedDataset,
    cfg: &TrainConfig,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<TrainBatch> {
    let scenes = data.scenes_in(Split::Train);
    if scenes.is_empty() {
        return Err(Error::Dataset("no training scenes".into()));
    }
    let usable = usable_views(data, cfg)?;
    let v = match cfg.stage {
        Stage::RcnOnly => 1,
        Stage::Attention => cfg.views,
    };
    let size = data.manifest.image_size;
    let b = cfg.batch_size;
    let mut latents = Array5::zeros((b, v, 3, size, size));
    let mut eps_all = Array5::zeros((b, v, 3, size, size));
    let mut source_latents = Array4::zeros((b, 3, size, size));
    let mut cameras = Vec::with_capacity(b);
    let mut source_cameras = Vec::with_capacity(b);
    let mut timesteps = Vec::with_capacity(b);
    let mut drop = Vec::with_capacity(b);
    for bi in 0..b {
        let scene = scenes[rng.gen_range(0..scenes.len())];
        let src_idx = rng.gen_range(0..usable);
        let targets: Vec<usize> = match cfg.stage {
            Stage::RcnOnly => loop {
                let t = rng.gen_range(0..usable);
                if t != src_idx {
                    break vec![t];
                }
            },
            Stage::Attention => {
                let candidates: Vec<usize> = (0..usable).filter(|&i| i != src_idx).collect();
                let cams: Vec<Camera> = candidates
                    .iter()
                    .map(|&i| scene.views[i].view.camera())
                    .collect::<Result<_>>()?;
                let anchor = rng.gen_range(0..candidates.len());
                nearest_views(&cams, anchor, cfg.views)?
                    .into_iter()
                    .map(|p| candidates[p])
                    .collect()
            }
        };
        let t = rng.gen_range(1..=sched.t_steps());
        let mut instance_cams = Vec::with_capacity(v);
        for (vi, &tgt) in targets.iter().enumerate() {
            let z0 = image_to_latent(&scene.views[tgt].image);
            let eps = ndarray::Array3::from_shape_simple_fn(z0.raw_dim().into_pattern(), || rng.sample(StandardNormal));
            let zt = forward_noise(&z0, t, &eps, sched)?;
            latents.slice_mut(s![bi, vi, .., .., ..]).assign(&zt);
            eps_all.slice_mut(s![bi, vi, .., .., ..]).assign(&eps);
            instance_cams.push(scene.views[tgt].view.camera()?);
        }
        source_latents
            .slice_mut(s![bi, .., .., ..])
            .assign(&image_to_latent(&scene.views[src_idx].image));
        cameras.push(instance_cams);
        source_cameras.push(scene.views[src_idx].view.camera()?);
        timesteps.push(t);
        drop.push(rng.gen_bool(cfg.cond_drop));
    }
    Ok(TrainBatch {
        batch: MultiViewBatch { latents, cameras, source_cameras, source_latents, timesteps },
        eps: eps_all,
        drop,
    })
}

/// Mean-squared noise-prediction error on one batch.
pub fn training_loss(denoiser: &Denoiser, params: &ParamStore, tb: &TrainBatch) -> Result<f64> {
    let eps_hat = denoiser.forward(params, &tb.batch, &tb.drop)?;
    let n = eps_hat.len() as f64;
    Ok(eps_hat.iter().zip(tb.eps.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Loss plus parameter gradients via the explicit backward pass.
pub fn loss_and_grads(denoiser: &Denoiser, params: &ParamStore, tb: &TrainBatch) -> Result<(f64, GradStore)> {
    let (eps_hat, cache) = denoiser.forward_cached(params, &tb.batch, &tb.drop)?;
    let diff = &eps_hat - &tb.eps;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let d_eps = diff.mapv(|d| 2.0 * d / n);
    let grads = denoiser.backward(params, &cache, &d_eps);
    Ok((loss, grads))
}

/// Reconstruction quality probe: noise a ground-truth view to a fixed
/// timestep, predict ε̂ conditioned on the source view, invert the forward
/// process in one shot (ẑ₀ = (z_t − √(1−ᾱ)ε̂)/√ᾱ), and compare images.
pub fn eval_recon_psnr(
    model: &Model,
    data: &LoadedDataset,
    pairs: usize,
    t_frac: f64,
    holdout: usize,
    seed: u64,
) -> Result<f64> {
    let test_scenes = data.scenes_in(Split::Test);
    let all_scenes: Vec<&SceneRecord> = if test_scenes.is_empty() { data.scenes.iter().collect() } else { test_scenes };
    if all_scenes.is_empty() {
        return Err(Error::Dataset("no scenes to evaluate".into()));
    }
    let total_views = data.manifest.views_per_scene;
    if total_views < 2 {
        return Err(Error::Dataset("evaluation needs at least two views per scene".into()));
    }
    let sched = &model.schedule;
    let t_eval = ((t_frac * sched.t_steps() as f64).round() as usize).clamp(1, sched.t_steps());
    let mut rng = stream(mix(seed, "eval-recon"));
    let mut total = 0.0;
    for k in 0..pairs {
        let scene = all_scenes[k % all_scenes.len()];
        let (src_idx, tgt_idx) = if holdout > 0 && holdout < total_views {
            let tgt = total_views - 1 - (k % holdout);
            (rng.gen_range(0..total_views - holdout), tgt)
        } else {
            let src = rng.gen_range(0..total_views);
            let tgt = loop {
                let t = rng.gen_range(0..total_views);
                if t != src {
                    break t;
                }
            };
            (src, tgt)
        };
        let z0 = image_to_latent(&scene.views[tgt_idx].image);
        let eps = ndarray::Array3::from_shape_simple_fn(z0.raw_dim().into_pattern(), || rng.sample::<f64, _>(StandardNormal));
        let zt = forward_noise(&z0, t_eval, &eps, sched)?;
        let size = data.manifest.image_size;
        let mut latents = Array5::zeros((1, 1, 3, size, size));
        latents.slice_mut(s![0, 0, .., .., ..]).assign(&zt);
        let batch = MultiViewBatch {
            latents,
            cameras: vec![vec![scene.views[tgt_idx].view.camera()?]],
            source_cameras: vec![scene.views[src_idx].view.camera()?],
            source_latents: image_to_latent(&scene.views[src_idx].image).insert_axis(ndarray::Axis(0)),
            timesteps: vec![t_eval],
        };
        let eps_hat = model.denoiser.forward(&model.params, &batch, &[false])?;
        let ab = sched.alpha_bar(t_eval);
        let z0_hat = zt
            .iter()
            .zip(eps_hat.iter())
            .map(|(z, e)| (z - (1.0 - ab).sqrt() * e) / ab.sqrt())
            .collect::<Vec<f64>>();
        let z0_hat = ndarray::Array3::from_shape_vec(z0.raw_dim().into_pattern(), z0_hat).unwrap();
        total += psnr(&latent_to_image(&z0_hat), &scene.views[tgt_idx].image)?;
    }
    Ok(total / pairs as f64)
}

/// Training artifact summary.
#[derive(Debug)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// (step, reconstruction PSNR) at each evaluation point.
    pub evals: Vec<(usize, f64)>,
    pub wall_secs: f64,
}

/// Runs the optimization loop, mutating the model in place. Appends
/// `step,loss,lr,psnr_eval` lines to `log_path` when given. Aborts with a
/// diagnostic on any non-finite loss, gradient, or parameter.
pub fn train(model: &mut Model, data: &LoadedDataset, cfg: &TrainConfig, log_path: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let net_cfg = model.denoiser.config();
    if data.manifest.image_size != net_cfg.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}px, model expects {}px",
            data.manifest.image_size, net_cfg.image_size
        )));
    }
    if net_cfg.latent_channels != 3 {
        return Err(Error::Config("training images are RGB; latent_channels must be 3".into()));
    }
    usable_views(data, cfg)?;
    if data.scenes_in(Split::Train).is_empty() {
        return Err(Error::Dataset("no training scenes".into()));
    }

    let mut log = match log_path {
        Some(path) => {
            let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "step,loss,lr,psnr_eval").map_err(|e| Error::io(path, e))?;
            Some((f, path.to_path_buf()))
        }
        None => None,
    };
    let mut opt = AdamW::new(cfg.lr)
        .weight_decay(cfg.weight_decay)
        .new_lr_scale(cfg.new_lr_scale)
        .freeze_backbone(cfg.freeze_backbone);
    let mut rng = stream(mix(cfg.seed, "train"));
    let started = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    for step in 1..=cfg.steps {
        let tb = assemble_batch(data, cfg, &model.schedule, &mut rng)?;
        let (loss, grads) = loss_and_grads(&model.denoiser, &model.params, &tb)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Train(format!(
                "non-finite loss or gradient at step {step} (loss {loss}, grad norm {}, previous loss {})",
                grads.global_norm(),
                losses.last().copied().unwrap_or(f64::NAN),
            )));
        }
        opt.step(&mut model.params, &grads);
        if !model.params.all_finite() {
            return Err(Error::Train(format!(
                "parameters left the finite range after step {step} (loss {loss}, grad norm {})",
                grads.global_norm()
            )));
        }
        losses.push(loss);
        let eval_due = cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps);
        let psnr_eval = if eval_due {
            let p = eval_recon_psnr(model, data, cfg.eval_pairs, cfg.eval_t_frac, cfg.holdout_views, cfg.seed)?;
            evals.push((step, p));
            Some(p)
        } else {
            None
        };
        if let Some((f, path)) = log.as_mut() {
            let tail = psnr_eval.map(|p| format!("{p:.4}")).unwrap_or_default();
            writeln!(f, "{step},{loss:.8e},{:.8e},{tail}", cfg.lr).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(TrainReport { losses, evals, wall_secs: started.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;
    use crate::geometry::{orbit_camera, Intrinsics, OrbitPose, OrbitView};
    use crate::net::{CondMode, DenoiserConfig};
    use crate::scene::{DatasetManifest, ViewRecord};

    fn test_intr(size: usize) -> Intrinsics {
        let f = size as f64 * 0.9;
        Intrinsics { fx: f, fy: f, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size }
    }

    /// In-memory dataset with random [0,1] images on random orbit poses.
    fn synthetic_dataset(scene_count: usize, views: usize, size: usize, seed: u64) -> LoadedDataset {
        let mut rng = stream(mix(seed, "synthetic-data"));
        let intr = test_intr(size);
        let scenes = (0..scene_count)
            .map(|si| {
                let views = (0..views)
                    .map(|vi| ViewRecord {
                        index: vi,
                        image: ndarray::Array3::from_shape_simple_fn((size, size, 3), || rng.gen_range(0.0..=1.0)),
                        view: OrbitView {
                            pose: OrbitPose::new(rng.gen_range(0.1..0.8), rng.gen_range(0.0..6.28), rng.gen_range(1.8..2.4)),
                            intr,
                        },
                    })
                    .collect();
                SceneRecord { id: format!("scene-{si:04x}"), split: Split::Train, views }
            })
            .collect();
        LoadedDataset {
            manifest: DatasetManifest {
                scene_count,
                views_per_scene: views,
                image_size: size,
                theta_range: (0.1, 0.8),
                z_range: (1.8, 2.4),
                seed,
            },
            scenes,
        }
    }

    fn tiny_model(mode: CondMode, attention: bool, seed: u64) -> Model {
        let cfg = DenoiserConfig {
            image_size: 8,
            latent_channels: 3,
            channels: vec![4, 6],
            time_dim: 8,
            mode,
            attention,
            fourier_bands: 2,
            mod_hidden: 4,
            src_channels: vec![4, 4],
        };
        let sched = ScheduleConfig { t_steps: 10, beta_start: 1e-3, beta_end: 0.2, ..Default::default() };
        Model::new(cfg, sched, seed).unwrap()
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig { steps: 3, batch_size: 1, lr: 1e-3, cond_drop: 0.0, ..Default::default() }
    }

    #[test]
    fn nearest_views_orders_by_angle_with_index_tie_break() {
        let intr = test_intr(8);
        // Same elevation everywhere, so azimuth separation orders the
        // great-circle angles: from 0° the gaps are 50°, 160°, 120°; from
        // 160° they are 160°, 110°, 80°.
        let cams: Vec<Camera> = [0.0_f64, 50.0, 160.0, 240.0]
            .iter()
            .map(|deg| orbit_camera(&OrbitPose::new(0.3, deg.to_radians(), 2.0), &intr).unwrap())
            .collect();
        assert_eq!(nearest_views(&cams, 0, 2).unwrap(), vec![0, 1]);
        assert_eq!(nearest_views(&cams, 0, 3).unwrap(), vec![0, 1, 3]);
        assert_eq!(nearest_views(&cams, 2, 2).unwrap(), vec![2, 3]);
        // Exact tie (duplicated camera) resolves to the smaller index.
        let tie = vec![cams[0].clone(), cams[1].clone(), cams[1].clone()];
        assert_eq!(nearest_views(&tie, 0, 2).unwrap(), vec![0, 1]);
        assert!(nearest_views(&cams, 0, 5).is_err());
        assert!(nearest_views(&cams, 4, 2).is_err());
    }

    #[test]
    fn nearest_views_matches_exhaustive_oracle() {
        let intr = test_intr(8);
        let mut rng = stream(99);
        for _ in 0..40 {
            let cams: Vec<Camera> = (0..9)
                .map(|_| {
                    let pose = OrbitPose::new(rng.gen_range(-0.5..1.2), rng.gen_range(0.0..6.28), rng.gen_range(1.5..3.0));
                    orbit_camera(&pose, &intr).unwrap()
                })
                .collect();
            let anchor = rng.gen_range(0..cams.len());
            let n = rng.gen_range(1..=cams.len());
            let a = cams[anchor].center().normalize();
            let mut oracle: Vec<(f64, usize)> = cams
                .iter()
                .enumerate()
                .map(|(i, c)| (c.center().normalize().dot(&a).clamp(-1.0, 1.0).acos(), i))
                .collect();
            oracle.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let want: Vec<usize> = oracle.into_iter().take(n).map(|(_, i)| i).collect();
            assert_eq!(nearest_views(&cams, anchor, n).unwrap(), want);
        }
    }

    #[test]
    fn ray_conditioned_step_zero_loss_matches_pose_token_baseline() {
        // Identity at init: the modulation heads start at zero, so a fresh
        // ray-conditioned model scores exactly like the pose-token backbone
        // on the same batch. The concat variants add extra input channels
        // with live weights, so they are only required to be finite.
        let data = synthetic_dataset(2, 5, 8, 3);
        let cfg = tiny_train_cfg();
        let mut losses = Vec::new();
        for mode in CondMode::ALL {
            let model = tiny_model(mode, false, 7);
            // Same sampling stream for every mode → identical batches.
            let mut rng = stream(mix(11, "batch"));
            let tb = assemble_batch(&data, &cfg, &model.schedule, &mut rng).unwrap();
            losses.push(training_loss(&model.denoiser, &model.params, &tb).unwrap());
        }
        let [pose_token, concat_in, concat_ms, rcn] = losses[..] else { unreachable!() };
        assert!((rcn - pose_token).abs() < 1e-6, "rcn {rcn} vs pose_token {pose_token}");
        assert!(concat_in.is_finite() && concat_ms.is_finite());
    }

    #[test]
    fn trainer_loss_gradients_match_finite_differences() {
        let data = synthetic_dataset(1, 4, 8, 5);
        let mut cfg = tiny_train_cfg();
        cfg.stage = Stage::Attention;
        cfg.views = 2;
        let model = tiny_model(CondMode::Rcn, true, 13);
        let mut rng = stream(mix(17, "fd-batch"));
        let tb = assemble_batch(&data, &cfg, &model.schedule, &mut rng).unwrap();
        let (_, grads) = loss_and_grads(&model.denoiser, &model.params, &tb).unwrap();
        let mut ps = model.params.clone();
        let h = 1e-5;
        for name in ["stem.conv.w", "enc0.res.mod.l1.w", "mid.res.conv1.w", "dec0.attn.wv", "temb.l2.w", "src.proj.b"] {
            let grad = grads.get(name).unwrap_or_else(|| panic!("no grad for {name}")).clone();
            for idx in [0, grad.len() - 1] {
                let orig = ps.get(name).as_slice().unwrap()[idx];
                ps.get_mut(name).as_slice_mut().unwrap()[idx] = orig + h;
                let up = training_loss(&model.denoiser, &ps, &tb).unwrap();
                ps.get_mut(name).as_slice_mut().unwrap()[idx] = orig - h;
                let down = training_loss(&model.denoiser, &ps, &tb).unwrap();
                ps.get_mut(name).as_slice_mut().unwrap()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grad.as_slice().unwrap()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                assert!(rel < 1e-3, "{name}[{idx}]: analytic {an} vs fd {fd} (rel {rel})");
            }
        }
    }

    #[test]
    fn zero_steps_leaves_the_model_untouched() {
        let data = synthetic_dataset(1, 3, 8, 9);
        let mut model = tiny_model(CondMode::Rcn, false, 21);
        let before = model.params.clone();
        let mut cfg = tiny_train_cfg();
        cfg.steps = 0;
        let report = train(&mut model, &data, &cfg, None).unwrap();
        assert!(report.losses.is_empty());
        assert_eq!(model.params.max_abs_diff(&before).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_reproduces_the_loss_series_bit_for_bit() {
        let data = synthetic_dataset(2, 4, 8, 31);
        let cfg = TrainConfig { steps: 4, batch_size: 1, lr: 1e-3, ..Default::default() };
        let mut m1 = tiny_model(CondMode::Rcn, false, 3);
        let r1 = train(&mut m1, &data, &cfg, None).unwrap();
        let mut m2 = tiny_model(CondMode::Rcn, false, 3);
        let r2 = train(&mut m2, &data, &cfg, None).unwrap();
        assert_eq!(r1.losses, r2.losses);
        assert_eq!(m1.params.max_abs_diff(&m2.params).unwrap(), 0.0);
        // A different sampling seed changes the series.
        let mut m3 = tiny_model(CondMode::Rcn, false, 3);
        let r3 = train(&mut m3, &data, &TrainConfig { seed: 1, ..cfg }, None).unwrap();
        assert_ne!(r1.losses, r3.losses);
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_probe_batch() {
        let data = synthetic_dataset(1, 3, 8, 41);
        let mut model = tiny_model(CondMode::Rcn, false, 5);
        let cfg = TrainConfig { steps: 40, batch_size: 1, lr: 3e-3, cond_drop: 0.0, ..Default::default() };
        let probe = {
            let mut rng = stream(mix(43, "probe"));
            assemble_batch(&data, &cfg, &model.schedule, &mut rng).unwrap()
        };
        let before = training_loss(&model.denoiser, &model.params, &probe).unwrap();
        train(&mut model, &data, &cfg, None).unwrap();
        let after = training_loss(&model.denoiser, &model.params, &probe).unwrap();
        assert!(after < before, "loss did not improve: {before} → {after}");
    }

    #[test]
    fn diverging_runs_abort_with_a_diagnostic() {
        let data = synthetic_dataset(1, 3, 8, 51);
        let mut model = tiny_model(CondMode::Rcn, false, 7);
        // Large enough that squared activations overflow f64 into inf/NaN
        // on the step after the blow-up (normalization keeps merely-huge
        // values finite, so a modest learning rate only stalls).
        let cfg = TrainConfig { steps: 10, batch_size: 1, lr: 1e160, ..Default::default() };
        match train(&mut model, &data, &cfg, None) {
            Err(Error::Train(msg)) => assert!(msg.contains("step"), "diagnostic lacks step: {msg}"),
            other => panic!("expected a training abort, got {other:?}"),
        }
    }

    #[test]
    fn freeze_backbone_trains_only_the_new_group() {
        let data = synthetic_dataset(1, 6, 8, 61);
        let mut model = tiny_model(CondMode::Rcn, true, 9);
        let before = model.params.clone();
        let cfg = TrainConfig {
            stage: Stage::Attention,
            views: 2,
            steps: 3,
            batch_size: 1,
            lr: 1e-3,
            freeze_backbone: true,
            ..Default::default()
        };
        train(&mut model, &data, &cfg, None).unwrap();
        let mut new_moved = false;
        for (name, tensor) in model.params.iter() {
            let was = before.get(name);
            let same = tensor.iter().zip(was.iter()).all(|(a, b)| a == b);
            if crate::net::is_new_param(name) {
                new_moved |= !same;
            } else {
                assert!(same, "backbone parameter {name} moved while frozen");
            }
        }
        assert!(new_moved, "no new-group parameter moved");
    }

    #[test]
    fn eval_psnr_is_finite_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("train.csv");
        let data = synthetic_dataset(2, 4, 8, 71);
        let mut model = tiny_model(CondMode::Rcn, false, 11);
        let cfg = TrainConfig {
            steps: 2,
            batch_size: 1,
            lr: 1e-3,
            eval_every: 2,
            eval_pairs: 3,
            ..Default::default()
        };
        let report = train(&mut model, &data, &cfg, Some(&log)).unwrap();
        assert_eq!(report.evals.len(), 1);
        let (step, p) = report.evals[0];
        assert_eq!(step, 2);
        assert!(p.is_finite() && p > 0.0 && p <= 99.0, "psnr {p}");
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,lr,psnr_eval");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].split(',').nth(3).unwrap().len() > 1, "eval column missing: {}", lines[2]);
    }

    #[test]
    fn holdout_views_are_never_sampled_for_training() {
        let data = synthetic_dataset(1, 5, 8, 81);
        let cfg = TrainConfig { holdout_views: 2, batch_size: 4, ..tiny_train_cfg() };
        let model = tiny_model(CondMode::Rcn, false, 13);
        let mut rng = stream(3);
        for _ in 0..25 {
            let tb = assemble_batch(&data, &cfg, &model.schedule, &mut rng).unwrap();
            for (bi, cams) in tb.batch.cameras.iter().enumerate() {
                // Views 3 and 4 are held out; every sampled camera must be
                // one of views 0..3.
                let allowed: Vec<Camera> = (0..3).map(|i| data.scenes[0].views[i].view.camera().unwrap()).collect();
                for cam in cams.iter().chain(std::iter::once(&tb.batch.source_cameras[bi])) {
                    assert!(
                        allowed.iter().any(|a| (a.center() - cam.center()).norm() < 1e-12),
                        "sampled a held-out view"
                    );
                }
            }
        }
    }

    #[test]
    fn config_round_trips_and_rejects_invalid() {
        let cfg = TrainConfig {
            stage: Stage::Attention,
            steps: 7,
            views: 3,
            lr: 5e-4,
            freeze_backbone: true,
            holdout_views: 1,
            ..Default::default()
        };
        let text: String = cfg.to_kv_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut reader = KvReader::from_text(&text).unwrap();
        let back = TrainConfig::from_kv(&mut reader).unwrap();
        reader.finish().unwrap();
        assert_eq!(cfg, back);
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { cond_drop: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { eval_t_frac: 0.0, ..Default::default() }.validate().is_err());
        assert!("warmup".parse::<Stage>().is_err());
    }

    #[test]
    fn attention_stage_requires_enough_views() {
        let data = synthetic_dataset(1, 4, 8, 91);
        let mut model = tiny_model(CondMode::Rcn, true, 15);
        let cfg = TrainConfig {
            stage: Stage::Attention,
            views: 4, // needs 5 views per scene, dataset has 4
            steps: 1,
            ..tiny_train_cfg()
        };
        assert!(train(&mut model, &data, &cfg, None).is_err());
    }
}
