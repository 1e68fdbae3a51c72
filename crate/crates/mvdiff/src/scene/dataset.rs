//! Dataset on disk:
//!
//! ```text
//! <root>/manifest.txt            key=value build parameters
//! <root>/<scene_id>/cameras.txt  one orbit view per line
//! <root>/<scene_id>/<idx>.png    8-bit RGB view
//! ```
//!
//! Scene ids are derived from the run seed, so a seed override changes every
//! id (and therefore the train/test partition) deterministically. The split
//! itself hashes only the id: it is stable under re-runs and disjoint by
//! construction.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{read_orbit_file, write_orbit_file, Intrinsics, OrbitPose, OrbitView};
use crate::kv::{self, KvReader};
use crate::rng::{mix, mix_index, stream};
use crate::scene::{generate_scene, render};

/// Focal length as a fraction of the image side. With scene content inside
/// radius 0.85 and the closest default orbit at z = 1.8, the half field of
/// view (atan(0.5/0.9) ≈ 29.1°) still covers the whole scene
/// (asin(0.85/1.8) ≈ 28.2°) while keeping it large in frame.
const FOCAL_FACTOR: f64 = 0.9;

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub scene_count: usize,
    pub views_per_scene: usize,
    pub image_size: usize,
    pub theta_range: (f64, f64),
    pub z_range: (f64, f64),
    pub seed: u64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            scene_count: 50,
            views_per_scene: 8,
            image_size: 32,
            theta_range: (-0.3, 1.0),
            z_range: (1.8, 2.6),
            seed: 0,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.scene_count == 0 {
            return Err(Error::Config("scene_count must be >= 1".into()));
        }
        if self.views_per_scene < 2 {
            return Err(Error::Config("views_per_scene must be >= 2".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be >= 8".into()));
        }
        if !(self.theta_range.0 < self.theta_range.1) || self.theta_range.1 >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("theta range must be increasing and below π/2".into()));
        }
        if !(self.z_range.0 > 1.0 && self.z_range.0 < self.z_range.1) {
            return Err(Error::Config("z range must be increasing and start above the unit sphere".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        kv::format(&[
            ("format_version".into(), MANIFEST_VERSION.to_string()),
            ("scene_count".into(), self.scene_count.to_string()),
            ("views_per_scene".into(), self.views_per_scene.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("theta_min".into(), format!("{:.17e}", self.theta_range.0)),
            ("theta_max".into(), format!("{:.17e}", self.theta_range.1)),
            ("z_min".into(), format!("{:.17e}", self.z_range.0)),
            ("z_max".into(), format!("{:.17e}", self.z_range.1)),
            ("seed".into(), self.seed.to_string()),
        ])
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = KvReader::from_text(text)?;
        let version: u32 = r.require("format_version")?;
        if version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!("unsupported manifest version {version}")));
        }
        let m = Self {
            scene_count: r.require("scene_count")?,
            views_per_scene: r.require("views_per_scene")?,
            image_size: r.require("image_size")?,
            theta_range: (r.require("theta_min")?, r.require("theta_max")?),
            z_range: (r.require("z_min")?, r.require("z_max")?),
            seed: r.require("seed")?,
        };
        r.finish()?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Stable 80/20 partition by scene id hash.
pub fn split_of(scene_id: &str) -> Split {
    if crate::rng::mix(0, scene_id) % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Debug)]
pub struct BuildSummary {
    pub root: PathBuf,
    pub scene_ids: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// One rendered view with its camera parameters.
#[derive(Debug, Clone)]
pub struct ViewRecord {
    pub index: usize,
    pub image: Array3<f64>,
    pub view: OrbitView,
}

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub scenes: Vec<SceneRecord>,
}

impl LoadedDataset {
    pub fn scenes_in(&self, split: Split) -> Vec<&SceneRecord> {
        self.scenes.iter().filter(|s| s.split == split).collect()
    }
}

fn scene_id(manifest_seed: u64, index: usize) -> (String, u64) {
    let scene_seed = mix_index(mix(manifest_seed, "scene"), index as u64);
    (format!("s{scene_seed:016x}"), scene_seed)
}

/// Renders every scene/view to disk. Returns the id lists per split.
pub fn build_dataset(manifest: &DatasetManifest, root: &Path) -> Result<BuildSummary> {
    manifest.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    std::fs::write(root.join("manifest.txt"), manifest.to_text()).map_err(|e| Error::io(root.join("manifest.txt"), e))?;

    let size = manifest.image_size;
    let f = size as f64 * FOCAL_FACTOR;
    let intr = Intrinsics { fx: f, fy: f, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size };

    let mut summary = BuildSummary { root: root.to_path_buf(), scene_ids: Vec::new(), train: Vec::new(), test: Vec::new() };
    for i in 0..manifest.scene_count {
        let (id, scene_seed) = scene_id(manifest.seed, i);
        let scene = generate_scene(scene_seed);
        let mut pose_rng = stream(mix(scene_seed, "poses"));
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mut views = Vec::with_capacity(manifest.views_per_scene);
        for vi in 0..manifest.views_per_scene {
            let pose = OrbitPose::new(
                pose_rng.gen_range(manifest.theta_range.0..manifest.theta_range.1),
                pose_rng.gen_range(0.0..std::f64::consts::TAU),
                pose_rng.gen_range(manifest.z_range.0..manifest.z_range.1),
            );
            let view = OrbitView { pose, intr };
            let img = render(&scene, &view.camera()?);
            write_png(&dir.join(format!("{vi}.png")), &img)?;
            views.push(view);
        }
        write_orbit_file(&dir.join("cameras.txt"), &views)?;

        match split_of(&id) {
            Split::Train => summary.train.push(id.clone()),
            Split::Test => summary.test.push(id.clone()),
        }
        summary.scene_ids.push(id);
    }
    Ok(summary)
}

/// Loads a dataset directory written by [`build_dataset`].
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let manifest_path = root.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = DatasetManifest::from_text(&text)?;

    let mut scenes = Vec::with_capacity(manifest.scene_count);
    for i in 0..manifest.scene_count {
        let (id, _) = scene_id(manifest.seed, i);
        let dir = root.join(&id);
        let orbit_views = read_orbit_file(&dir.join("cameras.txt"))?;
        if orbit_views.len() != manifest.views_per_scene {
            return Err(Error::Dataset(format!(
                "scene {id}: expected {} views, cameras.txt has {}",
                manifest.views_per_scene,
                orbit_views.len()
            )));
        }
        let mut views = Vec::with_capacity(orbit_views.len());
        for (vi, view) in orbit_views.into_iter().enumerate() {
            let image = read_png(&dir.join(format!("{vi}.png")))?;
            let (h, w, _) = image.dim();
            if h != manifest.image_size || w != manifest.image_size {
                return Err(Error::Dataset(format!("scene {id} view {vi}: image is {w}x{h}, manifest says {0}x{0}", manifest.image_size)));
            }
            views.push(ViewRecord { index: vi, image, view });
        }
        scenes.push(SceneRecord { id: id.clone(), split: split_of(&id), views });
    }
    Ok(LoadedDataset { manifest, scenes })
}

/// Quantizes [0,1] floats to 8-bit RGB. Round-trip error is at most 1/255
/// per channel and a second write of a loaded image is byte-identical.
pub fn write_png(path: &Path, image: &Array3<f64>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::shape("(h, w, 3) image", format!("(h, w, {c})")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let px = [
                (image[(v, u, 0)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[(v, u, 1)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[(v, u, 2)].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(u as u32, v as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(Error::from)
}

pub fn read_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for v in 0..h {
        for u in 0..w {
            let px = img.get_pixel(u, v);
            for c in 0..3 {
                out[(v as usize, u as usize, c)] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_manifest(seed: u64) -> DatasetManifest {
        DatasetManifest { scene_count: 6, views_per_scene: 3, image_size: 16, seed, ..Default::default() }
    }

    #[test]
    fn build_then_load_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(5);
        let summary = build_dataset(&manifest, dir.path()).unwrap();
        assert_eq!(summary.scene_ids.len(), 6);
        assert_eq!(summary.train.len() + summary.test.len(), 6);

        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest, manifest);
        assert_eq!(loaded.scenes.len(), 6);
        for scene in &loaded.scenes {
            assert_eq!(scene.views.len(), 3);
            for view in &scene.views {
                assert_eq!(view.image.dim(), (16, 16, 3));
            }
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(9);
        build_dataset(&manifest, dir_a.path()).unwrap();
        build_dataset(&manifest, dir_b.path()).unwrap();
        let id = &load_dataset(dir_a.path()).unwrap().scenes[0].id;
        let a = std::fs::read(dir_a.path().join(id).join("0.png")).unwrap();
        let b = std::fs::read(dir_b.path().join(id).join("0.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_changes_scene_ids() {
        let a = scene_id(1, 0).0;
        let b = scene_id(2, 0).0;
        assert_ne!(a, b);
    }

    #[test]
    fn split_is_stable_and_partitions() {
        let (id, _) = scene_id(3, 7);
        assert_eq!(split_of(&id), split_of(&id));
        // Across many ids both splits occur, with train the large side.
        let mut train = 0;
        let mut test = 0;
        for i in 0..200 {
            match split_of(&scene_id(11, i).0) {
                Split::Train => train += 1,
                Split::Test => test += 1,
            }
        }
        assert!(train > test && test > 0, "train {train} test {test}");
    }

    #[test]
    fn png_roundtrip_quantization_error_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut img = Array3::zeros((8, 8, 3));
        let mut rng = crate::rng::stream(3);
        use rand::Rng;
        img.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        let max_err = (&img - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 255.0, "max quantization error {max_err}");

        // Second write of the loaded image is byte-identical.
        let path2 = dir.path().join("y.png");
        write_png(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn manifest_rejects_bad_ranges() {
        let mut m = tiny_manifest(1);
        m.views_per_scene = 1;
        assert!(m.validate().is_err());
        let mut m = tiny_manifest(1);
        m.z_range = (0.5, 2.0);
        assert!(m.validate().is_err());
        let mut m = tiny_manifest(1);
        m.theta_range = (1.0, 0.2);
        assert!(m.validate().is_err());
    }
}
