//! Plain-text camera lists: one view per line,
//! `theta phi z fx fy cx cy width height`, `#` starts a comment.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{orbit_camera, Camera, Intrinsics, OrbitPose};

/// One serialized view: orbit pose plus intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitView {
    pub pose: OrbitPose,
    pub intr: Intrinsics,
}

impl OrbitView {
    pub fn camera(&self) -> Result<Camera> {
        orbit_camera(&self.pose, &self.intr)
    }
}

pub fn format_orbit_line(view: &OrbitView) -> String {
    format!(
        "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {} {}",
        view.pose.theta,
        view.pose.phi,
        view.pose.z,
        view.intr.fx,
        view.intr.fy,
        view.intr.cx,
        view.intr.cy,
        view.intr.width,
        view.intr.height
    )
}

pub fn parse_orbit_line(line: &str) -> Result<OrbitView> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 9 {
        return Err(Error::Config(format!("camera line needs 9 fields, got {}: {line:?}", fields.len())));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("camera line field {i} not a number: {:?}", fields[i])))
    };
    let dim = |i: usize| -> Result<usize> {
        fields[i]
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("camera line field {i} not a size: {:?}", fields[i])))
    };
    Ok(OrbitView {
        pose: OrbitPose::new(num(0)?, num(1)?, num(2)?),
        intr: Intrinsics { fx: num(3)?, fy: num(4)?, cx: num(5)?, cy: num(6)?, width: dim(7)?, height: dim(8)? },
    })
}

pub fn write_orbit_file(path: &Path, views: &[OrbitView]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# theta phi z fx fy cx cy width height").map_err(|e| Error::io(path, e))?;
    for view in views {
        writeln!(file, "{}", format_orbit_line(view)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_orbit_file(path: &Path) -> Result<Vec<OrbitView>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut views = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        views.push(parse_orbit_line(trimmed)?);
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn line_roundtrip_preserves_values() {
        let view = OrbitView {
            pose: OrbitPose::new(0.123456789012345, 5.4321, 2.25),
            intr: Intrinsics { fx: 31.7, fy: 29.1, cx: 16.0, cy: 15.5, width: 32, height: 30 },
        };
        let back = parse_orbit_line(&format_orbit_line(&view)).unwrap();
        assert_relative_eq!(back.pose.theta, view.pose.theta);
        assert_relative_eq!(back.pose.phi, view.pose.phi);
        assert_relative_eq!(back.intr.fy, view.intr.fy);
        assert_eq!(back.intr.width, 32);
    }

    #[test]
    fn file_roundtrip_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        let views: Vec<OrbitView> = (0..5)
            .map(|i| OrbitView {
                pose: OrbitPose::new(0.1 * i as f64, 0.9 * i as f64, 2.0),
                intr: Intrinsics { fx: 32.0, fy: 32.0, cx: 16.0, cy: 16.0, width: 32, height: 32 },
            })
            .collect();
        write_orbit_file(&path, &views).unwrap();
        let back = read_orbit_file(&path).unwrap();
        assert_eq!(back, views);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_orbit_line("1 2 3").is_err());
        assert!(parse_orbit_line("a b c d e f g 32 32").is_err());
        assert!(parse_orbit_line("0 0 2 32 32 16 16 32 banana").is_err());
    }
}
