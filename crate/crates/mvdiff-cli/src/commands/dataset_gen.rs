//! `mvdiff dataset-gen` — render a procedural orbit dataset.

use std::path::PathBuf;

use mvdiff::scene::{build_dataset, DatasetManifest};
use mvdiff::Result;

use crate::artifacts::{ensure_dir, write_resolved};
use crate::config::ConfigBag;

#[derive(clap::Args)]
pub struct Args {
    /// Dataset root directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value config file. Keys: scene_count, views_per_scene,
    /// image_size, theta_min, theta_max, z_min, z_max, seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; drives scene ids, shapes, textures and poses.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes (overrides `scene_count`).
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Views per scene (overrides `views_per_scene`).
    #[arg(long)]
    pub views: Option<usize>,
    /// Square image resolution in pixels (overrides `image_size`).
    #[arg(long)]
    pub size: Option<usize>,
}

pub fn run(args: &Args) -> Result<()> {
    let mut bag = ConfigBag::load(args.config.as_deref())?;
    bag.set_if("scene_count", &args.scenes);
    bag.set_if("views_per_scene", &args.views);
    bag.set_if("image_size", &args.size);
    bag.set_if("seed", &args.seed);

    let mut r = bag.reader();
    let d = DatasetManifest::default();
    let manifest = DatasetManifest {
        scene_count: r.take_or("scene_count", d.scene_count)?,
        views_per_scene: r.take_or("views_per_scene", d.views_per_scene)?,
        image_size: r.take_or("image_size", d.image_size)?,
        theta_range: (r.take_or("theta_min", d.theta_range.0)?, r.take_or("theta_max", d.theta_range.1)?),
        z_range: (r.take_or("z_min", d.z_range.0)?, r.take_or("z_max", d.z_range.1)?),
        seed: r.take_or("seed", d.seed)?,
    };
    r.finish()?;
    manifest.validate()?;

    ensure_dir(&args.out)?;
    let summary = build_dataset(&manifest, &args.out)?;

    let mut pairs = vec![("cmd".to_string(), "dataset-gen".to_string())];
    pairs.extend(mvdiff::kv::parse(&manifest.to_text())?);
    write_resolved(&args.out, &pairs)?;

    println!(
        "dataset: {} scenes ({} train / {} test), {} views each, {}x{} px -> {}",
        summary.scene_ids.len(),
        summary.train.len(),
        summary.test.len(),
        manifest.views_per_scene,
        manifest.image_size,
        manifest.image_size,
        summary.root.display()
    );
    Ok(())
}
