//! `mvdiff eval` — score a directory of rendered frames.
//!
//! Two independent measurements, each optional:
//! * with `--reference`, every frame is compared 1:1 against the reference
//!   frame of the same rank (PSNR / SSIM / perceptual) into `metrics.csv`;
//!   identical directories score at the PSNR cap, SSIM 1, perceptual 0.
//! * whenever the frame directory holds two or more frames plus a camera
//!   file, the sequence's view consistency is scored into `pplc.csv` (the
//!   rectified, gap-normalized perceptual distance between neighbours).
//!
//! `metrics.csv` schema: `frame,psnr,ssim,perceptual` with one row per frame
//! and a final `mean,...` row. `pplc.csv` schema: `pair,raw,phi,score,coverage,note`
//! with one row per neighbour pair and a final `summary,...` line.

use std::path::PathBuf;

use mvdiff::geometry::Camera;
use mvdiff::metrics::{perceptual_distance, pplc, psnr, ssim, PplcOptions, RandomPyramid};
use mvdiff::{Error, Result};

use crate::artifacts::{ensure_dir, read_frames, read_frames_with_cameras, write_resolved};
use crate::config::ConfigBag;

#[derive(clap::Args)]
pub struct Args {
    /// Directory of frames to score (render output or dataset scene).
    #[arg(long)]
    pub frames: PathBuf,
    /// Directory of reference frames to compare against 1:1.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output directory for the metric CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value config file with eval.* keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature-pyramid seed (overrides `eval.pyramid_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &Args) -> Result<()> {
    let mut bag = ConfigBag::load(args.config.as_deref())?;
    bag.set_if("eval.pyramid_seed", &args.seed);

    let mut r = bag.reader();
    let rectify: bool = r.take_or("eval.rectify", true)?;
    let closed: bool = r.take_or("eval.closed", true)?;
    // 0 = derive the proxy-plane depth from the camera orbit radius.
    let plane_depth: f64 = r.take_or("eval.plane_depth", 0.0)?;
    let pyramid_seed: u64 = r.take_or("eval.pyramid_seed", 0)?;
    let pyramid_scales: usize = r.take_or("eval.pyramid_scales", 3)?;
    let pyramid_channels: usize = r.take_or("eval.pyramid_channels", 8)?;
    r.finish()?;

    let (frames, views) = read_frames_with_cameras(&args.frames)?;
    if frames.is_empty() {
        return Err(Error::Dataset(format!("no frames found in {}", args.frames.display())));
    }
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera()).collect::<Result<_>>()?;
    let pyramid = RandomPyramid::new(pyramid_seed, pyramid_scales, pyramid_channels)?;

    ensure_dir(&args.out)?;
    let mut summary = Vec::new();

    if let Some(ref_dir) = &args.reference {
        let reference = read_frames(ref_dir)?;
        if reference.len() != frames.len() {
            return Err(Error::Dataset(format!(
                "{} frames in {} but {} in reference {}",
                frames.len(),
                args.frames.display(),
                reference.len(),
                ref_dir.display()
            )));
        }
        let mut csv = String::from("frame,psnr,ssim,perceptual\n");
        let (mut p_sum, mut s_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for (i, (a, b)) in frames.iter().zip(&reference).enumerate() {
            let p = psnr(a, b)?;
            let s = ssim(a, b)?;
            let f = perceptual_distance(a, b, &pyramid)?;
            csv.push_str(&format!("{i},{p:.17e},{s:.17e},{f:.17e}\n"));
            p_sum += p;
            s_sum += s;
            f_sum += f;
        }
        let n = frames.len() as f64;
        let (p, s, f) = (p_sum / n, s_sum / n, f_sum / n);
        csv.push_str(&format!("mean,{p:.17e},{s:.17e},{f:.17e}\n"));
        let path = args.out.join("metrics.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        summary.push(format!("psnr {p:.2} dB, ssim {s:.4}, perceptual {f:.6} over {} frames", frames.len()));
    }

    if frames.len() >= 2 {
        let depth = if plane_depth > 0.0 {
            plane_depth
        } else {
            // The procedural scenes sit at the origin, so the orbit radius is
            // the natural proxy-plane depth.
            cameras.iter().map(|c| c.center().norm()).sum::<f64>() / cameras.len() as f64
        };
        let opts = PplcOptions { rectify, plane_depth: depth, closed };
        let report = pplc(&frames, &cameras, &pyramid, &opts)?;
        let path = args.out.join("pplc.csv");
        std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
        summary.push(format!("pplc {:.6} over {} pairs", report.mean, report.pairs.len()));
    } else {
        summary.push("pplc skipped: needs at least 2 frames".to_string());
    }

    let mut pairs = vec![
        ("cmd".to_string(), "eval".to_string()),
        ("frames".to_string(), args.frames.display().to_string()),
        ("eval.rectify".to_string(), rectify.to_string()),
        ("eval.closed".to_string(), closed.to_string()),
        ("eval.plane_depth".to_string(), format!("{plane_depth:.17e}")),
        ("eval.pyramid_seed".to_string(), pyramid_seed.to_string()),
        ("eval.pyramid_scales".to_string(), pyramid_scales.to_string()),
        ("eval.pyramid_channels".to_string(), pyramid_channels.to_string()),
    ];
    if let Some(ref_dir) = &args.reference {
        pairs.push(("reference".to_string(), ref_dir.display().to_string()));
    }
    write_resolved(&args.out, &pairs)?;

    for line in &summary {
        println!("{line}");
    }
    Ok(())
}
