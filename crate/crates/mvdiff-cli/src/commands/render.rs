//! `mvdiff render` — generate a camera orbit from one dataset view.
//!
//! The source image, its camera, and the orbit radius/elevation all come from
//! the chosen dataset view; the command sweeps azimuth uniformly over a full
//! circle. Artifacts: `frame_###.png` per frame, the trajectory in
//! `orbit.txt`, an optional `montage.png`, and `resolved.kv`.

use std::path::PathBuf;

use mvdiff::checkpoint::Model;
use mvdiff::geometry::{pose_of_camera, write_orbit_file};
use mvdiff::kv::parse_bool;
use mvdiff::sampler::{render_orbit, OrbitRequest, SampleConfig};
use mvdiff::scene::{load_dataset, write_png};
use mvdiff::{Error, Result};

use crate::artifacts::{ensure_dir, montage, write_frames, write_resolved};
use crate::config::ConfigBag;

#[derive(clap::Args)]
pub struct Args {
    /// Trained checkpoint to sample from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root providing the source view (read only).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for frames, orbit.txt and montage.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value config file with sample.* and render.* keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sampling seed (overrides `sample.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scene index into the dataset (overrides `render.scene`).
    #[arg(long)]
    pub scene: Option<usize>,
    /// Source view index within the scene (overrides `render.view`).
    #[arg(long)]
    pub view: Option<usize>,
    /// Number of orbit frames (overrides `render.frames`).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Joint-denoising window size (overrides `render.window`).
    #[arg(long)]
    pub window: Option<usize>,
    /// Initial-noise mode: shared | independent (overrides `sample.noise`).
    #[arg(long)]
    pub noise: Option<String>,
    /// Classifier-free guidance scale (overrides `sample.scale`).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Denoising steps; must match the checkpoint schedule (overrides `sample.steps`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also write a montage grid of all frames.
    #[arg(long)]
    pub montage: bool,
}

pub fn run(args: &Args) -> Result<()> {
    let mut bag = ConfigBag::load(args.config.as_deref())?;
    bag.set_if("sample.seed", &args.seed);
    bag.set_if("sample.noise", &args.noise);
    bag.set_if("sample.scale", &args.scale);
    bag.set_if("sample.steps", &args.steps);
    bag.set_if("render.scene", &args.scene);
    bag.set_if("render.view", &args.view);
    bag.set_if("render.frames", &args.frames);
    bag.set_if("render.window", &args.window);
    if args.montage {
        bag.set("render.montage", true);
    }

    let model = Model::load(&args.checkpoint)?;
    // The step count must match the checkpoint's schedule, so the checkpoint
    // is the right default; an explicit key still wins (and then has to match).
    let had_steps = bag.contains("sample.steps");
    let mut r = bag.reader();
    let mut scfg = SampleConfig::from_kv(&mut r)?;
    if !had_steps {
        scfg.steps = model.schedule.t_steps();
    }
    let scene_idx: usize = r.take_or("render.scene", 0)?;
    let view_idx: usize = r.take_or("render.view", 0)?;
    let frames: usize = r.take_or("render.frames", 8)?;
    let window: usize = r.take_or("render.window", 4)?;
    let want_montage = match r.take("render.montage") {
        Some(s) => parse_bool(&s)?,
        None => false,
    };
    r.finish()?;

    let data = load_dataset(&args.data)?;
    let scene = data
        .scenes
        .get(scene_idx)
        .ok_or_else(|| Error::Config(format!("render.scene {scene_idx} out of range: dataset has {} scenes", data.scenes.len())))?;
    let view = scene
        .views
        .get(view_idx)
        .ok_or_else(|| Error::Config(format!("render.view {view_idx} out of range: scene has {} views", scene.views.len())))?;

    let source_camera = view.view.camera()?;
    let pose = pose_of_camera(&source_camera);
    let mut req = OrbitRequest::circle(view.image.clone(), source_camera, view.view.intr, pose.theta, pose.z, frames);
    req.window = window;

    let result = render_orbit(&model, &req, &scfg)?;

    ensure_dir(&args.out)?;
    let names = write_frames(&args.out, &result.frames)?;
    write_orbit_file(&args.out.join("orbit.txt"), &result.views)?;
    if want_montage {
        write_png(&args.out.join("montage.png"), &montage(&result.frames)?)?;
    }

    let mut pairs = vec![
        ("cmd".to_string(), "render".to_string()),
        ("checkpoint".to_string(), args.checkpoint.display().to_string()),
        ("data".to_string(), args.data.display().to_string()),
        ("render.scene".to_string(), scene_idx.to_string()),
        ("render.view".to_string(), view_idx.to_string()),
        ("render.frames".to_string(), frames.to_string()),
        ("render.window".to_string(), window.to_string()),
        ("render.montage".to_string(), want_montage.to_string()),
    ];
    pairs.extend(scfg.to_kv_pairs());
    write_resolved(&args.out, &pairs)?;

    println!(
        "rendered {} frames ({}..{}) around scene {} -> {}",
        names.len(),
        names.first().map(String::as_str).unwrap_or(""),
        names.last().map(String::as_str).unwrap_or(""),
        scene.id,
        args.out.display()
    );
    Ok(())
}
