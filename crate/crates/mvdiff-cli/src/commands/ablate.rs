//! `mvdiff ablate` — six-mode conditioning/consistency ladder.
//!
//! All modes share one dataset, one seed and one step budget, so the rows
//! differ only in the design choice under test:
//!
//! | row | change under test                                             |
//! |-----|---------------------------------------------------------------|
//! | A   | pose-token conditioning (global camera embedding)             |
//! | B   | ray map concatenated at the input                             |
//! | C   | ray map concatenated at every scale                           |
//! | D   | per-pixel ray-conditioned normalization (RCN)                 |
//! | E   | D grown with cross-view attention, second training stage      |
//! | F   | E sampled with shared initial noise — no retraining           |
//!
//! Per row the command reports mean held-out PSNR/SSIM/perceptual distance
//! (full guided sampling of each test scene's held-out view) and mean orbit
//! PPLC, then evaluates the directional checks: D > A and B > A on PSNR, and
//! F < E on per-orbit PPLC for at least 90% of test orbits. E and F must
//! share a bit-identical checkpoint. Artifacts: per-row `"<label>/"`
//! directories, `ladder.csv`, `report.txt`, `resolved.kv`.

use std::path::{Path, PathBuf};

use mvdiff::checkpoint::Model;
use mvdiff::diffusion::ScheduleConfig;
use mvdiff::geometry::Camera;
use mvdiff::metrics::{perceptual_distance, pplc, psnr, ssim, PplcOptions, RandomPyramid};
use mvdiff::net::{CondMode, DenoiserConfig};
use mvdiff::sampler::{render_orbit, sample_views, NoiseMode, OrbitRequest, SampleConfig};
use mvdiff::scene::{load_dataset, LoadedDataset, SceneRecord, Split};
use mvdiff::train::{eval_recon_psnr, train, Stage, TrainConfig};
use mvdiff::{Error, Result};

use crate::artifacts::{ensure_dir, sha256_hex, write_resolved};
use crate::config::{reject_keys, ConfigBag};

/// Settings the ladder controls itself; accepting them from the config would
/// silently break the "identical seeds and budgets" contract between rows.
const LADDER_CONTROLLED: &[&str] =
    &["net.mode", "net.attention", "train.stage", "train.steps", "train.seed"];

#[derive(clap::Args)]
pub struct Args {
    /// Dataset root (read only).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for per-mode runs and the ladder report.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value config file with ablate.*, net.*, sched.*, train.* keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed shared by every row (overrides `ablate.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

struct LadderCfg {
    seed: u64,
    stage1_steps: usize,
    stage2_steps: usize,
    orbit_frames: usize,
    window: usize,
    scale: f64,
    /// Cap on test scenes used for sampled metrics (0 = all).
    eval_scenes: usize,
    /// Cap on test scenes used for PPLC orbits (0 = all).
    orbit_scenes: usize,
    recon_pairs: usize,
}

struct Row {
    label: &'static str,
    name: &'static str,
    /// Per-orbit PPLC means, one per evaluated test scene.
    pplc_per_orbit: Vec<f64>,
    psnr: f64,
    ssim: f64,
    perceptual: f64,
    recon_psnr: f64,
}

impl Row {
    fn pplc_mean(&self) -> f64 {
        self.pplc_per_orbit.iter().sum::<f64>() / self.pplc_per_orbit.len().max(1) as f64
    }
}

pub fn run(args: &Args) -> Result<()> {
    let mut bag = ConfigBag::load(args.config.as_deref())?;
    bag.set_if("ablate.seed", &args.seed);

    let mut r = bag.reader();
    reject_keys(&mut r, LADDER_CONTROLLED, "is controlled by the ablation ladder")?;
    let lcfg = LadderCfg {
        seed: r.take_or("ablate.seed", 0)?,
        stage1_steps: r.take_or("ablate.stage1_steps", 400)?,
        stage2_steps: r.take_or("ablate.stage2_steps", 200)?,
        orbit_frames: r.take_or("ablate.orbit_frames", 8)?,
        window: r.take_or("ablate.window", 4)?,
        scale: r.take_or("ablate.scale", 3.0)?,
        eval_scenes: r.take_or("ablate.eval_scenes", 0)?,
        orbit_scenes: r.take_or("ablate.orbit_scenes", 0)?,
        recon_pairs: r.take_or("ablate.recon_pairs", 16)?,
    };
    let base_net = DenoiserConfig::from_kv(&mut r)?;
    let sched = ScheduleConfig::from_kv(&mut r)?;
    let mut base_train = TrainConfig::from_kv(&mut r)?;
    r.finish()?;

    // Every row needs genuinely held-out target views.
    base_train.holdout_views = base_train.holdout_views.max(1);
    base_train.seed = lcfg.seed;

    let data = load_dataset(&args.data)?;
    ensure_dir(&args.out)?;

    let mut pairs = vec![
        ("cmd".to_string(), "ablate".to_string()),
        ("data".to_string(), args.data.display().to_string()),
        ("ablate.seed".to_string(), lcfg.seed.to_string()),
        ("ablate.stage1_steps".to_string(), lcfg.stage1_steps.to_string()),
        ("ablate.stage2_steps".to_string(), lcfg.stage2_steps.to_string()),
        ("ablate.orbit_frames".to_string(), lcfg.orbit_frames.to_string()),
        ("ablate.window".to_string(), lcfg.window.to_string()),
        ("ablate.scale".to_string(), format!("{:.17e}", lcfg.scale)),
        ("ablate.eval_scenes".to_string(), lcfg.eval_scenes.to_string()),
        ("ablate.orbit_scenes".to_string(), lcfg.orbit_scenes.to_string()),
        ("ablate.recon_pairs".to_string(), lcfg.recon_pairs.to_string()),
    ];
    pairs.extend(base_net.to_kv_pairs().into_iter().filter(|(k, _)| k != "net.mode" && k != "net.attention"));
    pairs.extend(sched.to_kv_pairs());
    pairs.extend(
        base_train
            .to_kv_pairs()
            .into_iter()
            .filter(|(k, _)| k != "train.stage" && k != "train.steps" && k != "train.seed"),
    );
    write_resolved(&args.out, &pairs)?;

    // ---- training phase -------------------------------------------------

    let stage1 = [
        ("A", CondMode::PoseToken),
        ("B", CondMode::ConcatInput),
        ("C", CondMode::ConcatMultiscale),
        ("D", CondMode::Rcn),
    ];
    for (label, mode) in stage1 {
        let mut net = base_net.clone();
        net.mode = mode;
        net.attention = false;
        let mut model = Model::new(net, sched.clone(), lcfg.seed)?;
        let mut tcfg = base_train.clone();
        tcfg.stage = Stage::RcnOnly;
        tcfg.steps = lcfg.stage1_steps;
        train_row(&mut model, &data, &tcfg, &args.out, label)?;
    }

    // E grows cross-view attention out of D's checkpoint and fine-tunes it.
    {
        let mut net = base_net.clone();
        net.mode = CondMode::Rcn;
        net.attention = true;
        let mut model = Model::load(&checkpoint_path(&args.out, "D"))?.with_architecture(net, lcfg.seed)?;
        let mut tcfg = base_train.clone();
        tcfg.stage = Stage::Attention;
        tcfg.steps = lcfg.stage2_steps;
        train_row(&mut model, &data, &tcfg, &args.out, "E")?;
    }

    // F is a sampling-mode change only: same checkpoint, byte for byte.
    ensure_dir(&args.out.join("F"))?;
    std::fs::copy(checkpoint_path(&args.out, "E"), checkpoint_path(&args.out, "F"))
        .map_err(|e| Error::io(&checkpoint_path(&args.out, "F"), e))?;
    let sha_e = sha256_hex(&checkpoint_path(&args.out, "E"))?;
    let sha_f = sha256_hex(&checkpoint_path(&args.out, "F"))?;

    // ---- measurement phase ----------------------------------------------

    let rows_spec: [(&'static str, &'static str, NoiseMode); 6] = [
        ("A", "pose_token", NoiseMode::Independent),
        ("B", "concat_input", NoiseMode::Independent),
        ("C", "concat_multiscale", NoiseMode::Independent),
        ("D", "rcn", NoiseMode::Independent),
        ("E", "rcn_attention", NoiseMode::Independent),
        ("F", "rcn_attention_shared_noise", NoiseMode::Shared),
    ];
    let pyramid = RandomPyramid::new(lcfg.seed, 3, 8)?;
    let mut rows = Vec::new();
    for (label, name, noise) in rows_spec {
        let model = Model::load(&checkpoint_path(&args.out, label))?;
        let row = measure_row(label, name, noise, &model, &data, &base_train, &lcfg, &pyramid)?;
        rows.push(row);
    }

    // ---- report ----------------------------------------------------------

    let mut csv = String::from("mode,label,psnr,ssim,perceptual,pplc,recon_psnr\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            row.label,
            row.name,
            row.psnr,
            row.ssim,
            row.perceptual,
            row.pplc_mean(),
            row.recon_psnr
        ));
    }
    let csv_path = args.out.join("ladder.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;

    let by_label = |l: &str| rows.iter().find(|r| r.label == l).expect("all six rows measured");
    let (a, b, d, e, f) = (by_label("A"), by_label("B"), by_label("D"), by_label("E"), by_label("F"));
    let orbit_wins = e
        .pplc_per_orbit
        .iter()
        .zip(&f.pplc_per_orbit)
        .filter(|(pplc_e, pplc_f)| pplc_f < pplc_e)
        .count();
    let orbit_total = e.pplc_per_orbit.len();

    let mut lines = Vec::new();
    for row in &rows {
        lines.push(format!(
            "mode {} ({}): psnr={:.3} ssim={:.4} perceptual={:.6} pplc={:.6} recon_psnr={:.3}",
            row.label,
            row.name,
            row.psnr,
            row.ssim,
            row.perceptual,
            row.pplc_mean(),
            row.recon_psnr
        ));
    }
    lines.push(format!(
        "check (a) rcn beats pose_token on mean held-out PSNR: {:.3} vs {:.3} -> {}",
        d.psnr,
        a.psnr,
        pass(d.psnr > a.psnr)
    ));
    lines.push(format!(
        "check (b) concat_input beats pose_token on mean held-out PSNR: {:.3} vs {:.3} -> {}",
        b.psnr,
        a.psnr,
        pass(b.psnr > a.psnr)
    ));
    lines.push(format!(
        "check (c) shared noise lowers PPLC on {orbit_wins}/{orbit_total} test orbits (need >= 90%) -> {}",
        pass(orbit_total > 0 && orbit_wins * 10 >= orbit_total * 9)
    ));
    lines.push(format!("checkpoint sha256 E: {sha_e}"));
    lines.push(format!("checkpoint sha256 F: {sha_f}"));
    lines.push(format!("check (d) F reuses E's checkpoint byte for byte -> {}", pass(sha_e == sha_f)));

    let report_path = args.out.join("report.txt");
    std::fs::write(&report_path, lines.join("\n") + "\n").map_err(|e| Error::io(&report_path, e))?;
    for line in &lines {
        println!("{line}");
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn checkpoint_path(out: &Path, label: &str) -> PathBuf {
    out.join(label).join("checkpoint.mvdf")
}

fn train_row(model: &mut Model, data: &LoadedDataset, tcfg: &TrainConfig, out: &Path, label: &str) -> Result<()> {
    let dir = out.join(label);
    ensure_dir(&dir)?;
    let report = train(model, data, tcfg, Some(&dir.join("train_log.csv")))?;
    model.save(&checkpoint_path(out, label))?;
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    println!("mode {label}: trained {} steps, final loss {last:.6}", report.losses.len());
    Ok(())
}

/// Test scenes if the split is non-empty, the whole dataset otherwise — the
/// same fallback the trainer's own evaluation uses.
fn eval_scenes(data: &LoadedDataset, cap: usize) -> Vec<&SceneRecord> {
    let mut scenes = data.scenes_in(Split::Test);
    if scenes.is_empty() {
        scenes = data.scenes.iter().collect();
    }
    if cap > 0 {
        scenes.truncate(cap);
    }
    scenes
}

#[allow(clippy::too_many_arguments)]
fn measure_row(
    label: &'static str,
    name: &'static str,
    noise: NoiseMode,
    model: &Model,
    data: &LoadedDataset,
    base_train: &TrainConfig,
    lcfg: &LadderCfg,
    pyramid: &RandomPyramid,
) -> Result<Row> {
    let scfg = SampleConfig {
        steps: model.schedule.t_steps(),
        scale: lcfg.scale,
        noise,
        stochastic: true,
        seed: lcfg.seed,
    };

    // Held-out view quality: guided sampling of each test scene's last view
    // (always excluded from training because holdout_views >= 1), conditioned
    // on the scene's first view.
    let sample_scenes = eval_scenes(data, lcfg.eval_scenes);
    let (mut p_sum, mut s_sum, mut f_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
    for scene in &sample_scenes {
        let src = &scene.views[0];
        let tgt = scene.views.last().expect("scenes have at least one view");
        let src_cam = src.view.camera()?;
        let tgt_cam = tgt.view.camera()?;
        let generated = sample_views(model, &src.image, &src_cam, &[tgt_cam], &scfg)?;
        p_sum += psnr(&generated[0], &tgt.image)?;
        s_sum += ssim(&generated[0], &tgt.image)?;
        f_sum += perceptual_distance(&generated[0], &tgt.image, pyramid)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Metric("ablation needs at least one evaluation scene".into()));
    }

    // Orbit consistency: full-circle orbit per test scene at the source
    // view's elevation/radius, scored with the rectified neighbour metric.
    let orbit_scenes = eval_scenes(data, lcfg.orbit_scenes);
    let mut pplc_per_orbit = Vec::with_capacity(orbit_scenes.len());
    for scene in &orbit_scenes {
        let src = &scene.views[0];
        let src_cam = src.view.camera()?;
        let pose = src.view.pose;
        let mut req = OrbitRequest::circle(
            src.image.clone(),
            src_cam,
            src.view.intr,
            pose.theta,
            pose.z,
            lcfg.orbit_frames,
        );
        req.window = lcfg.window;
        let orbit = render_orbit(model, &req, &scfg)?;
        let cameras: Vec<Camera> = orbit.views.iter().map(|v| v.camera()).collect::<Result<_>>()?;
        let opts = PplcOptions { rectify: true, plane_depth: pose.z, closed: true };
        let report = pplc(&orbit.frames, &cameras, pyramid, &opts)?;
        pplc_per_orbit.push(report.mean);
    }

    let recon_psnr = eval_recon_psnr(
        model,
        data,
        lcfg.recon_pairs,
        0.5,
        base_train.holdout_views,
        lcfg.seed,
    )?;

    let n = count as f64;
    println!("mode {label}: measured {count} held-out views, {} orbits", pplc_per_orbit.len());
    Ok(Row {
        label,
        name,
        pplc_per_orbit,
        psnr: p_sum / n,
        ssim: s_sum / n,
        perceptual: f_sum / n,
        recon_psnr,
    })
}
