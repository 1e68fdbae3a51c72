//! Nearest-hit ray caster with one fixed directional light and no shadows.
//! Rendering is a pure per-pixel function of (scene, camera), so repeated
//! calls are bit-identical.

use nalgebra::Vector3;
use ndarray::Array3;

use crate::geometry::Camera;
use crate::scene::{Primitive, Scene, Shape, Texture};

/// Fixed key light, overhead but tilted well off the vertical so shading
/// breaks the azimuthal symmetry of the orbit.
const LIGHT_DIR: [f64; 3] = [0.55, 0.35, 0.9];

/// Lambert floor: keeps unlit faces visible against the background.
const AMBIENT: f64 = 0.25;

/// Intersection t below this is treated as self-intersection noise.
const T_MIN: f64 = 1e-9;

struct Hit {
    t: f64,
    point: Vector3<f64>,
    normal: Vector3<f64>,
}

fn intersect_sphere(o: &Vector3<f64>, d: &Vector3<f64>, center: &Vector3<f64>, radius: f64) -> Option<f64> {
    let oc = o - center;
    let b = oc.dot(d);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > T_MIN {
        return Some(t0);
    }
    let t1 = -b + sq;
    if t1 > T_MIN {
        return Some(t1);
    }
    None
}

fn intersect_box(o: &Vector3<f64>, d: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for i in 0..3 {
        let lo = center[i] - half[i];
        let hi = center[i] + half[i];
        if d[i].abs() < 1e-12 {
            if o[i] < lo || o[i] > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (t0, t1) = {
            let a = (lo - o[i]) * inv;
            let b = (hi - o[i]) * inv;
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        };
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_exit <= T_MIN {
        return None;
    }
    if t_enter > T_MIN {
        Some(t_enter)
    } else {
        Some(t_exit)
    }
}

fn box_normal(p: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>) -> Vector3<f64> {
    let local = p - center;
    let mut axis = 0;
    let mut best = 0.0;
    for i in 0..3 {
        let rel = (local[i] / half[i]).abs();
        if rel > best {
            best = rel;
            axis = i;
        }
    }
    let mut n = Vector3::zeros();
    n[axis] = local[axis].signum();
    n
}

fn hit_primitive(prim: &Primitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    match &prim.shape {
        Shape::Sphere { center, radius } => intersect_sphere(o, d, center, *radius).map(|t| {
            let point = o + d * t;
            Hit { t, point, normal: (point - center) / *radius }
        }),
        Shape::BoxAligned { center, half } => intersect_box(o, d, center, half).map(|t| {
            let point = o + d * t;
            Hit { t, point, normal: box_normal(&point, center, half) }
        }),
    }
}

fn texture_color(texture: &Texture, local: &Vector3<f64>) -> [f64; 3] {
    match texture {
        Texture::Flat(c) => *c,
        Texture::Checker { period, a, b } => {
            let cell = (local.x / period).floor() + (local.y / period).floor() + (local.z / period).floor();
            if (cell as i64).rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
        Texture::Stripes { period, axis, a, b } => {
            let cell = (local[*axis] / period).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
    }
}

/// Renders the scene through the camera's full pixel grid into an
/// `(height, width, 3)` image with values in [0, 1].
pub fn render(scene: &Scene, cam: &Camera) -> Array3<f64> {
    let light = Vector3::new(LIGHT_DIR[0], LIGHT_DIR[1], LIGHT_DIR[2]).normalize();
    let mut img = Array3::zeros((cam.height(), cam.width(), 3));
    for v in 0..cam.height() {
        for u in 0..cam.width() {
            let (o, d) = cam.pixel_ray(u, v);
            let mut nearest: Option<(Hit, &Primitive)> = None;
            for prim in &scene.primitives {
                if let Some(hit) = hit_primitive(prim, &o, &d) {
                    if nearest.as_ref().map_or(true, |(best, _)| hit.t < best.t) {
                        nearest = Some((hit, prim));
                    }
                }
            }
            let color = match &nearest {
                Some((hit, prim)) => {
                    let center = match &prim.shape {
                        Shape::Sphere { center, .. } => center,
                        Shape::BoxAligned { center, .. } => center,
                    };
                    let local = hit.point - center;
                    let tex = texture_color(&prim.texture, &local);
                    let lambert = AMBIENT + (1.0 - AMBIENT) * hit.normal.dot(&light).max(0.0);
                    [tex[0] * lambert, tex[1] * lambert, tex[2] * lambert]
                }
                None => scene.background,
            };
            for c in 0..3 {
                img[(v, u, c)] = color[c].clamp(0.0, 1.0);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orbit_camera, Intrinsics, OrbitPose};
    use crate::scene::generate_scene;

    fn intr(size: usize) -> Intrinsics {
        let s = size as f64;
        Intrinsics { fx: s, fy: s, cx: s / 2.0, cy: s / 2.0, width: size, height: size }
    }

    fn unit_sphere_scene() -> Scene {
        Scene {
            seed: 0,
            primitives: vec![Primitive {
                shape: Shape::Sphere { center: Vector3::zeros(), radius: 1.0 },
                texture: Texture::Flat([0.9, 0.9, 0.9]),
            }],
            background: [0.0, 0.0, 0.0],
        }
    }

    /// Silhouette of a unit sphere seen from z = 3 on axis: the projected
    /// radius is fx · r / sqrt(z² - r²).
    #[test]
    fn sphere_silhouette_matches_analytic_projection() {
        let size = 64usize;
        let cam = orbit_camera(&OrbitPose::new(0.0, 0.0, 3.0), &intr(size)).unwrap();
        let img = render(&unit_sphere_scene(), &cam);
        let expected = size as f64 * 1.0 / (9.0f64 - 1.0).sqrt();
        // Widest foreground row.
        let mut max_extent = 0.0f64;
        for v in 0..size {
            let row: Vec<usize> = (0..size).filter(|&u| img[(v, u, 0)] > 0.0).collect();
            if let (Some(&first), Some(&last)) = (row.first(), row.last()) {
                max_extent = max_extent.max((last - first + 1) as f64 / 2.0);
            }
        }
        assert!((max_extent - expected).abs() <= 1.0, "measured {max_extent}, analytic {expected}");
    }

    #[test]
    fn empty_scene_renders_background_only() {
        let scene = Scene { seed: 0, primitives: vec![], background: [0.1, 0.2, 0.3] };
        let cam = orbit_camera(&OrbitPose::new(0.3, 1.0, 2.0), &intr(8)).unwrap();
        let img = render(&scene, &cam);
        for v in 0..8 {
            for u in 0..8 {
                assert_eq!(img[(v, u, 0)], 0.1);
                assert_eq!(img[(v, u, 1)], 0.2);
                assert_eq!(img[(v, u, 2)], 0.3);
            }
        }
    }

    #[test]
    fn render_is_bit_identical_across_calls() {
        let scene = generate_scene(7);
        let cam = orbit_camera(&OrbitPose::new(0.4, 2.0, 2.2), &intr(32)).unwrap();
        let a = render(&scene, &cam);
        let b = render(&scene, &cam);
        assert_eq!(a, b);
    }

    /// Views 30° of azimuth apart must differ visibly for almost all scenes;
    /// this is what makes the pose-conditioning task well posed.
    #[test]
    fn azimuth_gap_changes_pixels() {
        let mut distinct = 0;
        let total = 100;
        for seed in 0..total {
            let scene = generate_scene(seed as u64);
            let a = orbit_camera(&OrbitPose::new(0.4, 1.0, 2.0), &intr(32)).unwrap();
            let b = orbit_camera(&OrbitPose::new(0.4, 1.0 + 30f64.to_radians(), 2.0), &intr(32)).unwrap();
            let ia = render(&scene, &a);
            let ib = render(&scene, &b);
            let mad = (&ia - &ib).mapv(f64::abs).mean().unwrap();
            if mad > 0.01 {
                distinct += 1;
            }
        }
        assert!(distinct >= 99, "only {distinct}/{total} scenes pose-distinguishable");
    }

    #[test]
    fn boxes_render_with_face_normals() {
        let scene = Scene {
            seed: 0,
            primitives: vec![Primitive {
                shape: Shape::BoxAligned { center: Vector3::zeros(), half: Vector3::new(0.4, 0.4, 0.4) },
                texture: Texture::Flat([1.0, 0.0, 0.0]),
            }],
            background: [0.0, 0.0, 0.0],
        };
        let cam = orbit_camera(&OrbitPose::new(0.5, 0.8, 2.0), &intr(32)).unwrap();
        let img = render(&scene, &cam);
        let foreground: usize = (0..32)
            .flat_map(|v| (0..32).map(move |u| (v, u)))
            .filter(|&(v, u)| img[(v, u, 0)] > 0.0)
            .count();
        assert!(foreground > 50, "box should cover a meaningful area, got {foreground} px");
    }
}
