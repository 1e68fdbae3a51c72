//! Procedural scenes: a handful of textured primitives inside the unit
//! bounding sphere, rendered with a one-light Lambertian ray caster.

mod dataset;
mod render;

pub use dataset::{
    build_dataset, load_dataset, read_png, split_of, write_png, BuildSummary, DatasetManifest, LoadedDataset,
    SceneRecord, Split, ViewRecord,
};
pub use render::render;

use nalgebra::Vector3;
use rand::Rng;

use crate::rng::{mix, stream};

/// Surface pattern, anchored to the primitive's local frame so appearance
/// rotates with the viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Flat([f64; 3]),
    Checker { period: f64, a: [f64; 3], b: [f64; 3] },
    Stripes { period: f64, axis: usize, a: [f64; 3], b: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Axis-aligned box.
    BoxAligned { center: Vector3<f64>, half: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl Scene {
    /// Furthest point of any primitive from the origin; must stay <= 1.
    pub fn bounding_radius(&self) -> f64 {
        self.primitives
            .iter()
            .map(|p| match &p.shape {
                Shape::Sphere { center, radius } => center.norm() + radius,
                Shape::BoxAligned { center, half } => center.norm() + half.norm(),
            })
            .fold(0.0, f64::max)
    }

    /// Coarse structural signature (primitive count, shape/texture kinds,
    /// quantized colors); used to confirm seeds generate distinct scenes.
    pub fn signature(&self) -> String {
        let mut parts = vec![format!("n{}", self.primitives.len())];
        for p in &self.primitives {
            let shape = match p.shape {
                Shape::Sphere { .. } => "sph",
                Shape::BoxAligned { .. } => "box",
            };
            let tex = match &p.texture {
                Texture::Flat(c) => format!("flat:{}", quant(c)),
                Texture::Checker { period, a, b } => format!("chk{:.0}:{}:{}", period * 100.0, quant(a), quant(b)),
                Texture::Stripes { period, axis, a, b } => {
                    format!("str{axis}{:.0}:{}:{}", period * 100.0, quant(a), quant(b))
                }
            };
            parts.push(format!("{shape}/{tex}"));
        }
        parts.join("|")
    }
}

fn quant(c: &[f64; 3]) -> String {
    format!("{:02x}{:02x}{:02x}", (c[0] * 255.0) as u8, (c[1] * 255.0) as u8, (c[2] * 255.0) as u8)
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.15..1.0), rng.gen_range(0.15..1.0), rng.gen_range(0.15..1.0)]
}

/// Two colors far enough apart in L1 that the pattern stays visible after
/// shading and quantization.
fn contrasting_pair<R: Rng>(rng: &mut R) -> ([f64; 3], [f64; 3]) {
    loop {
        let a = random_color(rng);
        let b = random_color(rng);
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        if dist > 1.0 {
            return (a, b);
        }
    }
}

/// Checker or stripes — never flat. World-anchored patterns are what make a
/// viewpoint recoverable from pixels, so every scene gets at least one.
/// Stripes run along x or y only: a z-striped surface looks the same from
/// every azimuth, which is exactly the symmetry we need to break.
fn patterned_texture<R: Rng>(rng: &mut R) -> Texture {
    let (a, b) = contrasting_pair(rng);
    if rng.gen_bool(0.5) {
        Texture::Checker { period: rng.gen_range(0.12..0.22), a, b }
    } else {
        Texture::Stripes { period: rng.gen_range(0.12..0.22), axis: rng.gen_range(0..2), a, b }
    }
}

/// How far from the origin any surface point may lie; below 1 so the whole
/// scene stays inside the unit bounding sphere with margin, and cameras at
/// the default orbit distances keep it fully in frame.
const MAX_EXTENT: f64 = 0.85;
/// Centers stay inside this ball.
const MAX_CENTER: f64 = 0.45;

fn center_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Vector3<f64> {
    loop {
        let c = Vector3::new(rng.gen_range(-radius..radius), rng.gen_range(-radius..radius), rng.gen_range(-radius..radius));
        if c.norm() <= radius {
            return c;
        }
    }
}

/// Generates a scene of 1–4 textured primitives, all inside the unit
/// bounding sphere. Deterministic in the seed.
///
/// Layout rules keep every scene pose-disambiguating under small camera
/// orbits: the first primitive always sits off the vertical axis and carries
/// a checker/stripe pattern, spheres are always patterned (a flat sphere is
/// nearly rotation-invariant), and primitive sizes grow as the count shrinks
/// so sparse scenes still cover a meaningful share of the frame at the
/// default orbit distances.
pub fn generate_scene(seed: u64) -> Scene {
    let mut rng = stream(mix(seed, "scene-gen"));
    let count = rng.gen_range(1..=4usize);
    // Sparse scenes get bigger primitives: ×1.6 for one primitive down to
    // ×1.0 for four.
    let scale = 1.0 + 0.2 * (4 - count) as f64;
    let mut primitives = Vec::with_capacity(count);
    let mut used_flat = false;
    for i in 0..count {
        let is_sphere = rng.gen_bool(0.5);
        // Flat color is an occasional accent on at most one box per scene;
        // patterned surfaces carry the pose signal. Spheres are always
        // patterned because a flat sphere is nearly rotation-invariant.
        let flat = i > 0 && !is_sphere && !used_flat && rng.gen_bool(1.0 / 3.0);
        used_flat |= flat;
        // The anchor and any flat primitive must sit off the vertical axis
        // so an azimuth orbit visibly moves them.
        let off_axis = i == 0 || flat;
        let shape = if is_sphere {
            let r_lo = 0.3 * scale;
            let center = pick_center(&mut rng, off_axis, MAX_CENTER.min(MAX_EXTENT - r_lo));
            let radius = rng.gen_range(r_lo..(0.4 * scale).min(MAX_EXTENT - center.norm()));
            Shape::Sphere { center, radius }
        } else {
            // A large flat box parked near the axis would occlude the
            // patterned primitives while itself looking the same from every
            // azimuth, so flat boxes stay small.
            let s = if flat { 1.0 } else { scale };
            let half = Vector3::new(
                rng.gen_range(0.22 * s..0.3 * s),
                rng.gen_range(0.22 * s..0.3 * s),
                rng.gen_range(0.22 * s..0.3 * s),
            );
            let center = pick_center(&mut rng, off_axis, MAX_CENTER.min(MAX_EXTENT - half.norm()));
            Shape::BoxAligned { center, half }
        };
        let texture = if flat { Texture::Flat(random_color(&mut rng)) } else { patterned_texture(&mut rng) };
        primitives.push(Primitive { shape, texture });
    }
    let background = [rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.25)];
    Scene { seed, primitives, background }
}

/// Center inside a ball; the anchor (first) primitive additionally keeps a
/// horizontal offset so an azimuth orbit visibly translates it. Large
/// anchors get a proportionally smaller offset floor because their ball of
/// admissible centers shrinks.
fn pick_center<R: Rng>(rng: &mut R, anchor: bool, radius: f64) -> Vector3<f64> {
    let min_xy = (0.25f64).min(0.7 * radius);
    loop {
        let c = center_in_ball(rng, radius);
        if !anchor || c.xy().norm() >= min_xy {
            return c;
        }
    }
}
