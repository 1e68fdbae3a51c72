//! `mvdiff train` — fit a denoiser on a rendered dataset.
//!
//! Fresh runs build the architecture from `net.*`/`sched.*` keys; runs with
//! `--init-from` take both from the checkpoint instead (only `net.attention`
//! may change, which is how the attention stage grows out of a single-view
//! checkpoint). Artifacts: `checkpoint.mvdf`, `train_log.csv`, `report.txt`,
//! `resolved.kv`.

use std::path::PathBuf;

use mvdiff::checkpoint::Model;
use mvdiff::diffusion::ScheduleConfig;
use mvdiff::net::DenoiserConfig;
use mvdiff::scene::load_dataset;
use mvdiff::train::{train, TrainConfig};
use mvdiff::Result;

use crate::artifacts::{ensure_dir, write_resolved};
use crate::config::ConfigBag;

/// Architecture/schedule keys that live inside a checkpoint and therefore
/// cannot be overridden when resuming from one.
const FROZEN_ON_RESUME: &[&str] = &[
    "net.image_size",
    "net.latent_channels",
    "net.channels",
    "net.time_dim",
    "net.mode",
    "net.fourier_bands",
    "net.mod_hidden",
    "net.src_channels",
    "sched.t_steps",
    "sched.beta_start",
    "sched.beta_end",
    "sched.sigma_mode",
];

#[derive(clap::Args)]
pub struct Args {
    /// Dataset root (read only).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, log and report.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value config file with net.*, sched.* and train.* keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimization steps (overrides `train.steps`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Training stage: rcn_only | attention (overrides `train.stage`).
    #[arg(long)]
    pub stage: Option<String>,
    /// Conditioning mode: pose_token | concat_input | concat_multiscale | rcn
    /// (overrides `net.mode`).
    #[arg(long)]
    pub mode: Option<String>,
    /// Enable/disable cross-view attention blocks (overrides `net.attention`).
    #[arg(long)]
    pub attention: Option<bool>,
    /// Start from an existing checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<()> {
    let mut bag = ConfigBag::load(args.config.as_deref())?;
    bag.set_if("train.seed", &args.seed);
    bag.set_if("train.steps", &args.steps);
    bag.set_if("train.stage", &args.stage);
    bag.set_if("net.mode", &args.mode);
    bag.set_if("net.attention", &args.attention);

    let mut r = bag.reader();
    let tcfg = TrainConfig::from_kv(&mut r)?;
    let mut model = match &args.init_from {
        None => {
            let net = DenoiserConfig::from_kv(&mut r)?;
            let sched = ScheduleConfig::from_kv(&mut r)?;
            Model::new(net, sched, tcfg.seed)?
        }
        Some(ck) => {
            let model = Model::load(ck)?;
            // Re-resolve the architecture as checkpoint values overlaid with
            // whatever the user explicitly provided, so a config file can be
            // reused across the initial run and the resume. Only
            // `net.attention` may actually change — that is how the attention
            // stage grows out of a single-view checkpoint.
            let mut merged = mvdiff::kv::parse(&mvdiff::kv::format(&model.denoiser.config().to_kv_pairs()))?;
            merged.extend(mvdiff::kv::parse(&mvdiff::kv::format(&model.sched_cfg.to_kv_pairs()))?);
            for key in FROZEN_ON_RESUME.iter().chain(&["net.attention"]) {
                if let Some(v) = r.take(key) {
                    merged.insert(key.to_string(), v);
                }
            }
            let mut rr = mvdiff::kv::KvReader::new(merged);
            let net = DenoiserConfig::from_kv(&mut rr)?;
            let sched = ScheduleConfig::from_kv(&mut rr)?;
            rr.finish()?;
            if sched != model.sched_cfg {
                return Err(mvdiff::Error::Config(
                    "sched.* keys are stored in the checkpoint and cannot be changed when resuming".into(),
                ));
            }
            let mut same_but_attention = net.clone();
            same_but_attention.attention = model.denoiser.config().attention;
            if &same_but_attention != model.denoiser.config() {
                return Err(mvdiff::Error::Config(
                    "net.* keys other than net.attention are stored in the checkpoint and cannot be changed when resuming"
                        .into(),
                ));
            }
            if net.attention != model.denoiser.config().attention {
                model.with_architecture(net, tcfg.seed)?
            } else {
                model
            }
        }
    };
    r.finish()?;

    let data = load_dataset(&args.data)?;
    ensure_dir(&args.out)?;

    let mut pairs = vec![
        ("cmd".to_string(), "train".to_string()),
        ("data".to_string(), args.data.display().to_string()),
    ];
    if let Some(ck) = &args.init_from {
        pairs.push(("init_from".to_string(), ck.display().to_string()));
    }
    pairs.extend(model.denoiser.config().to_kv_pairs());
    pairs.extend(model.sched_cfg.to_kv_pairs());
    pairs.extend(tcfg.to_kv_pairs());
    write_resolved(&args.out, &pairs)?;

    let log_path = args.out.join("train_log.csv");
    let report = train(&mut model, &data, &tcfg, Some(&log_path))?;
    let ck_path = args.out.join("checkpoint.mvdf");
    model.save(&ck_path)?;

    // The report repeats only seed-determined quantities so that reruns stay
    // bit-identical; wall-clock time goes to stdout instead.
    let mut lines = vec![format!("steps={}", report.losses.len())];
    if let Some(loss) = report.losses.last() {
        lines.push(format!("final_loss={loss:.17e}"));
    }
    if let Some((step, psnr)) = report.evals.last() {
        lines.push(format!("final_eval_step={step}"));
        lines.push(format!("final_eval_psnr={psnr:.17e}"));
    }
    let report_path = args.out.join("report.txt");
    std::fs::write(&report_path, lines.join("\n") + "\n").map_err(|e| mvdiff::Error::io(&report_path, e))?;

    println!(
        "trained {} steps in {:.1}s -> {}",
        report.losses.len(),
        report.wall_secs,
        ck_path.display()
    );
    if let Some(loss) = report.losses.last() {
        println!("final loss {loss:.6}");
    }
    if let Some((step, psnr)) = report.evals.last() {
        println!("eval psnr {psnr:.2} dB at step {step}");
    }
    Ok(())
}
