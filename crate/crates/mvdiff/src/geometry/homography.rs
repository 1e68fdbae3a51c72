//! Plane-induced rectifying homography between two calibrated views.
//!
//! The rectification plane is fronto-parallel to camera `a`: it is normal to
//! `a`'s optical axis and sits `plane_depth` world units in front of `a`'s
//! center. For orbit cameras (which look at the origin) passing the orbit
//! radius as `plane_depth` puts the plane through the world origin.
//!
//! For a plane written `n·X = d` in camera-b coordinates, points on it obey
//! `X_a = (R_rel + t_rel nᵀ / d) X_b`, so pixels map as
//! `x_a ~ K_a (R_rel + t_rel nᵀ / d) K_b⁻¹ x_b`. (The sign convention with
//! `n·X + d = 0` flips the sign of `d` and of the middle term; the matrix is
//! identical.) The result is normalized so `H[2][2] = 1`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Homography mapping continuous pixel coordinates of `cam_b` to those of
/// `cam_a`, induced by the fronto-parallel plane at `plane_depth` from `a`.
pub fn rectifying_homography(cam_a: &Camera, cam_b: &Camera, plane_depth: f64) -> Result<Matrix3<f64>> {
    if !(plane_depth > 0.0) {
        return Err(Error::Degenerate(format!("plane depth must be positive, got {plane_depth}")));
    }
    let r_rel = cam_a.r() * cam_b.r().transpose();
    let t_rel = cam_a.t() - r_rel * cam_b.t();

    // Plane in world coordinates: passes through p0 with unit normal facing
    // camera a.
    let axis = cam_a.axis();
    let n_world = -axis;
    let p0 = cam_a.center() + axis * plane_depth;

    // Same plane in camera-b coordinates: n·X = d.
    let n_b = cam_b.r() * n_world;
    let x0_b = cam_b.r() * p0 + cam_b.t();
    let d = n_b.dot(&x0_b);
    if d.abs() < 1e-9 {
        return Err(Error::Degenerate("camera b lies on the rectification plane".into()));
    }

    let mid = r_rel + t_rel * (n_b / d).transpose();
    let k_b_inv = cam_b
        .k()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular intrinsics".into()))?;
    let h = cam_a.k() * mid * k_b_inv;
    let scale = h[(2, 2)];
    if scale.abs() < 1e-12 {
        return Err(Error::Degenerate("rectifying homography is singular at the principal point".into()));
    }
    Ok(h / scale)
}

/// Applies a homography to a continuous pixel coordinate.
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(x, y, 1.0);
    if p.z.abs() < 1e-12 {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orbit_camera, Intrinsics, OrbitPose};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn intr() -> Intrinsics {
        Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0, width: 32, height: 32 }
    }

    #[test]
    fn pure_rotation_reduces_to_conjugated_rotation() {
        // Two cameras with the same center: t_rel = 0, so H = K_a R_rel K_b⁻¹
        // independent of the plane depth.
        let a = orbit_camera(&OrbitPose::new(0.3, 1.0, 2.0), &intr()).unwrap();
        // Same center, different orientation: build by hand from a's center.
        let r_b = {
            let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3);
            rot.matrix() * a.r()
        };
        let c = a.center();
        let b = Camera::new(*a.k(), r_b, -(r_b * c), 32, 32).unwrap();
        let h1 = rectifying_homography(&a, &b, 1.0).unwrap();
        let h2 = rectifying_homography(&a, &b, 7.0).unwrap();
        assert_relative_eq!(h1, h2, epsilon = 1e-10);
        let expected = a.k() * (a.r() * b.r().transpose()) * b.k().try_inverse().unwrap();
        assert_relative_eq!(h1, expected / expected[(2, 2)], epsilon = 1e-10);
    }

    /// Forward-projection oracle: sample points on the plane, project into
    /// both views, and check H maps the b-projection onto the a-projection.
    #[test]
    fn maps_on_plane_projections_exactly() {
        let mut rng = crate::rng::stream(47);
        for _ in 0..40 {
            let pose_a = OrbitPose::new(rng.gen_range(-0.8..0.8), rng.gen_range(0.0..6.28), rng.gen_range(1.6..2.6));
            let dphi = rng.gen_range(0.05..0.9);
            let pose_b = OrbitPose::new(pose_a.theta + rng.gen_range(-0.2..0.2), pose_a.phi + dphi, pose_a.z);
            let a = orbit_camera(&pose_a, &intr()).unwrap();
            let b = orbit_camera(&pose_b, &intr()).unwrap();
            // Plane through the world origin, fronto-parallel to a.
            let depth = a.center().norm();
            let h = rectifying_homography(&a, &b, depth).unwrap();
            // Basis of the plane.
            let n = -a.axis();
            let e1 = n.cross(&Vector3::new(0.0, 0.0, 1.0)).normalize();
            let e2 = n.cross(&e1);
            for _ in 0..20 {
                let p = e1 * rng.gen_range(-0.5..0.5) + e2 * rng.gen_range(-0.5..0.5);
                let (xa, ya) = a.project(&p).unwrap();
                let (xb, yb) = b.project(&p).unwrap();
                let (hx, hy) = apply_homography(&h, xb, yb).unwrap();
                assert!((hx - xa).abs() <= 1e-6 && (hy - ya).abs() <= 1e-6, "off-plane error {:e}", (hx - xa).abs().max((hy - ya).abs()));
            }
        }
    }

    #[test]
    fn camera_on_plane_is_degenerate() {
        let a = orbit_camera(&OrbitPose::new(0.0, 0.0, 2.0), &intr()).unwrap();
        // Camera b orbits 90° away at the same radius; the plane through the
        // origin facing a contains b's center.
        let b = orbit_camera(&OrbitPose::new(0.0, std::f64::consts::FRAC_PI_2, 2.0), &intr()).unwrap();
        let err = rectifying_homography(&a, &b, 2.0);
        assert!(matches!(err, Err(Error::Degenerate(_))), "{err:?}");
    }

    #[test]
    fn nonpositive_depth_rejected() {
        let a = orbit_camera(&OrbitPose::new(0.1, 0.0, 2.0), &intr()).unwrap();
        let b = orbit_camera(&OrbitPose::new(0.1, 0.3, 2.0), &intr()).unwrap();
        assert!(rectifying_homography(&a, &b, 0.0).is_err());
        assert!(rectifying_homography(&a, &b, -1.0).is_err());
    }

    #[test]
    fn normalized_lower_right_corner() {
        let a = orbit_camera(&OrbitPose::new(0.2, 0.1, 2.0), &intr()).unwrap();
        let b = orbit_camera(&OrbitPose::new(0.25, 0.4, 2.1), &intr()).unwrap();
        let h = rectifying_homography(&a, &b, 2.0).unwrap();
        assert_relative_eq!(h[(2, 2)], 1.0, epsilon = 1e-14);
    }
}
