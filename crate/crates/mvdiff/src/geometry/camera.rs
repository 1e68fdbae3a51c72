//! Pinhole camera model and the orbit parameterization.
//!
//! Conventions, used everywhere in this crate:
//! - World frame is right-handed with +z up. Orbit cameras sit at
//!   `c = z (cos θ cos φ, cos θ sin φ, sin θ)` and look at the world origin.
//! - Extrinsics map world to camera: `X_cam = R X_world + T`, so the camera
//!   center is `c = -Rᵀ T`. The camera looks down its +z axis, +x is image
//!   right, +y is image down.
//! - Pixel (u, v) covers the continuous coordinate square
//!   `[u, u+1) × [v, v+1)`; its center is at `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Calibrated pinhole camera with a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    width: usize,
    height: usize,
}

impl Camera {
    /// Validates intrinsics (upper triangular, positive focals, unit lower
    /// right corner) and extrinsics (R orthonormal with det +1).
    pub fn new(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera(format!("empty pixel grid {width}x{height}")));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera("K must be upper triangular".into()));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCamera("K[2][2] must be 1".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        let gram = r.transpose() * r;
        let drift = (gram - Matrix3::identity()).abs().max();
        if drift > ORTHONORMALITY_TOL {
            return Err(Error::InvalidCamera(format!("R not orthonormal (|RᵀR - I| = {drift:.2e})")));
        }
        if (r.determinant() - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::InvalidCamera("R must be a proper rotation (det +1)".into()));
        }
        Ok(Self { k, r, t, width, height })
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates, `-Rᵀ T`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Optical axis direction in world coordinates (third camera axis).
    pub fn axis(&self) -> Vector3<f64> {
        self.r.transpose() * Vector3::new(0.0, 0.0, 1.0)
    }

    /// Ray through a continuous pixel coordinate. The direction solves
    /// `K m = (x, y, 1)ᵀ` by back substitution and rotates the result into
    /// the world frame; the origin is the camera center for every pixel.
    pub fn ray_at(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let my = (y - self.k[(1, 2)]) / self.k[(1, 1)];
        let mx = (x - self.k[(0, 1)] * my - self.k[(0, 2)]) / self.k[(0, 0)];
        let d = self.r.transpose() * Vector3::new(mx, my, 1.0);
        (self.center(), d.normalize())
    }

    /// Ray through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> (Vector3<f64>, Vector3<f64>) {
        self.ray_at(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Projects a world point to continuous pixel coordinates. Returns None
    /// for points at or behind the camera plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let pc = self.r * p + self.t;
        if pc.z <= 1e-12 {
            return None;
        }
        let uvw = self.k * pc;
        Some((uvw.x / uvw.z, uvw.y / uvw.z))
    }

    /// Same camera pose with intrinsics rescaled to a new grid size.
    pub fn scaled(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut k = self.k;
        k[(0, 0)] *= sx;
        k[(0, 1)] *= sx;
        k[(0, 2)] *= sx;
        k[(1, 1)] *= sy;
        k[(1, 2)] *= sy;
        Camera::new(k, self.r, self.t, width, height)
    }

    /// This camera re-expressed in `reference`'s camera frame: the returned
    /// extrinsics map reference-frame points to this camera's frame, so ray
    /// maps and poses derived from it are relative to the reference view
    /// rather than to the arbitrary world origin.
    pub fn relative_to(&self, reference: &Camera) -> Result<Self> {
        let r_rel = self.r * reference.r.transpose();
        let t_rel = self.t - r_rel * reference.t;
        Camera::new(self.k, r_rel, t_rel, self.width, self.height)
    }
}

/// Position on the viewing orbit: elevation θ, azimuth φ, radius z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitPose {
    pub theta: f64,
    pub phi: f64,
    pub z: f64,
}

impl OrbitPose {
    pub fn new(theta: f64, phi: f64, z: f64) -> Self {
        Self { theta, phi, z }
    }

    /// Camera center implied by the pose.
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.z * self.theta.cos() * self.phi.cos(),
            self.z * self.theta.cos() * self.phi.sin(),
            self.z * self.theta.sin(),
        )
    }
}

/// Pinhole intrinsics bundle used by the orbit text format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Look-at camera for an orbit pose: optical axis points at the world
/// origin, image up is the world +z axis projected onto the image plane.
///
/// Degenerate when the pose looks straight along ±z (θ = ±π/2): the up
/// direction has no projection.
pub fn orbit_camera(pose: &OrbitPose, intr: &Intrinsics) -> Result<Camera> {
    if pose.z <= 0.0 {
        return Err(Error::InvalidCamera(format!("orbit radius must be positive, got {}", pose.z)));
    }
    let c = pose.center();
    let z_axis = (-c).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let up_proj = up - z_axis * up.dot(&z_axis);
    let norm = up_proj.norm();
    if norm < 1e-9 {
        return Err(Error::Degenerate(format!(
            "orbit pose looks along the world up axis (θ = {:.6}); image orientation undefined",
            pose.theta
        )));
    }
    let y_axis = -(up_proj / norm);
    let x_axis = y_axis.cross(&z_axis);
    let r = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
    let t = -(r * c);
    Camera::new(intr.matrix(), r, t, intr.width, intr.height)
}

/// Recovers the orbit pose of a camera that looks at the origin.
pub fn pose_of_camera(cam: &Camera) -> OrbitPose {
    let c = cam.center();
    let z = c.norm();
    let theta = (c.z / z).clamp(-1.0, 1.0).asin();
    let phi = c.y.atan2(c.x).rem_euclid(std::f64::consts::TAU);
    OrbitPose::new(theta, phi, z)
}
