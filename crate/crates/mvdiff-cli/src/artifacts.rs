//! Output/input plumbing shared by the subcommands: frame directories,
//! montage assembly, resolved-config emission, and checkpoint hashing.

use std::path::{Path, PathBuf};

use mvdiff::geometry::{read_orbit_file, OrbitView};
use mvdiff::kv;
use mvdiff::scene::{read_png, write_png};
use mvdiff::{Error, Result};
use ndarray::Array3;
use sha2::{Digest, Sha256};

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the fully resolved run configuration next to the run's outputs.
/// Together with the seed inside it, this file is sufficient to reproduce
/// the run bit for bit.
pub fn write_resolved(out: &Path, pairs: &[(String, String)]) -> Result<PathBuf> {
    let path = out.join("resolved.kv");
    std::fs::write(&path, kv::format(pairs)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:03}.png")
}

/// Writes one PNG per frame into `out`, returning the file names.
pub fn write_frames(out: &Path, frames: &[Array3<f64>]) -> Result<Vec<String>> {
    let mut names = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let name = frame_name(i);
        write_png(&out.join(&name), frame)?;
        names.push(name);
    }
    Ok(names)
}

/// Tiles frames into a near-square grid (row-major, black padding) so an
/// orbit can be inspected at a glance.
pub fn montage(frames: &[Array3<f64>]) -> Result<Array3<f64>> {
    if frames.is_empty() {
        return Err(Error::Config("montage needs at least one frame".into()));
    }
    let (h, w, c) = frames[0].dim();
    let cols = (frames.len() as f64).sqrt().ceil() as usize;
    let rows = frames.len().div_ceil(cols);
    let mut canvas = Array3::zeros((rows * h, cols * w, c));
    for (i, frame) in frames.iter().enumerate() {
        if frame.dim() != (h, w, c) {
            return Err(Error::shape(format!("{:?}", (h, w, c)), format!("{:?}", frame.dim())));
        }
        let (r0, c0) = ((i / cols) * h, (i % cols) * w);
        canvas.slice_mut(ndarray::s![r0..r0 + h, c0..c0 + w, ..]).assign(frame);
    }
    Ok(canvas)
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Lists the PNG frames of a directory in name order, skipping any montage.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().is_some_and(|e| e == "png");
        let is_montage = path.file_name().is_some_and(|n| n == "montage.png");
        if is_png && !is_montage {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a directory of frames without cameras (e.g. a reference set).
pub fn read_frames(dir: &Path) -> Result<Vec<Array3<f64>>> {
    let files = list_frame_files(dir)?;
    files.iter().map(|p| read_png(p)).collect()
}

/// Reads a frame directory together with its camera trajectory. Both the
/// `render` output layout (`frame_*.png` + `orbit.txt`) and the dataset scene
/// layout (`<i>.png` + `cameras.txt`) are accepted; a missing camera file is
/// reported under the name looked up first, `orbit.txt`.
pub fn read_frames_with_cameras(dir: &Path) -> Result<(Vec<Array3<f64>>, Vec<OrbitView>)> {
    let orbit_path = dir.join("orbit.txt");
    let camera_path = if orbit_path.exists() || !dir.join("cameras.txt").exists() {
        orbit_path
    } else {
        dir.join("cameras.txt")
    };
    let views = read_orbit_file(&camera_path)?;
    let frames = read_frames(dir)?;
    if frames.len() != views.len() {
        return Err(Error::Dataset(format!(
            "{} has {} frames but {} cameras in {}",
            dir.display(),
            frames.len(),
            views.len(),
            camera_path.display()
        )));
    }
    Ok((frames, views))
}
