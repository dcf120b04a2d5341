//! Procedural scenes with analytic surface normals and region labels.
//!
//! Two distribution presets model the labeled/unlabeled contrast: a narrow
//! "indoor-like" source ([`DistributionSpec::constrained`]) and a broad pool
//! ([`DistributionSpec::diverse`]). Diversity is palette breadth: the number
//! of active (shape, texture, background) combinations.

mod dataset;
mod render;

pub use dataset::{
    audit, gen_dataset, read_dataset, read_header, write_dataset, Dataset, DatasetHeader, LabelKind, Record,
    GT_SUFFIX,
};
pub use render::{render, BackgroundFill, Mat3, Material, Primitive, Scene, SceneObject, Vec3};

use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::rng::Rng;
use crate::tensor::Tensor;
use render::{axis_angle, normalize, IDENTITY};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Plane,
    Box,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Flat,
    Stripes,
    Checker,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Flat,
    Gradient,
    Noise,
}

/// Region label ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SegClass {
    Background = 0,
    Plane = 1,
    Box = 2,
    Sphere = 3,
    Cylinder = 4,
}

pub const NUM_SEG_CLASSES: usize = 5;
pub const SEG_CLASS_NAMES: [&str; NUM_SEG_CLASSES] = ["background", "plane", "box", "sphere", "cylinder"];

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        rng.range(self.lo, self.hi)
    }

    fn within(&self, outer: &Range) -> bool {
        outer.lo <= self.lo && self.hi <= outer.hi
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Directional light cone plus ambient term. Elevation is measured from the
/// image plane toward the viewer, azimuth in the image plane from +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub elevation_deg: Range,
    pub azimuth_deg: Range,
    pub ambient: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub name: String,
    pub shape_palette: Vec<Shape>,
    pub texture_palette: Vec<Texture>,
    pub background_palette: Vec<Background>,
    pub objects_per_scene: (usize, usize),
    pub lighting: Lighting,
    /// Half-extent of boxes, radius of spheres and cylinders.
    pub object_size: Range,
    /// Half-extent of plane rectangles.
    pub plane_size: Range,
    /// Plane tilt away from fronto-parallel.
    pub plane_tilt_deg: Range,
    /// Largest rotation applied to boxes and cylinders.
    pub max_rotation_deg: f64,
    /// Object centers are drawn from this range on x and y.
    pub placement: Range,
    pub height: usize,
    pub width: usize,
}

impl DistributionSpec {
    /// Narrow "indoor-like" source: planes and boxes, flat or striped,
    /// one to three objects, a fixed light cone and a flat backdrop.
    pub fn constrained() -> Self {
        Self {
            name: "constrained".into(),
            shape_palette: vec![Shape::Plane, Shape::Box],
            texture_palette: vec![Texture::Flat, Texture::Stripes],
            background_palette: vec![Background::Flat],
            objects_per_scene: (1, 3),
            lighting: Lighting {
                elevation_deg: Range::new(50.0, 70.0),
                azimuth_deg: Range::new(100.0, 140.0),
                ambient: Range::new(0.25, 0.35),
            },
            object_size: Range::new(0.25, 0.5),
            plane_size: Range::new(0.6, 1.2),
            plane_tilt_deg: Range::new(0.0, 60.0),
            max_rotation_deg: 45.0,
            placement: Range::new(-0.5, 0.5),
            height: 64,
            width: 64,
        }
    }

    /// Broad pool: every shape, texture and backdrop, up to six objects and
    /// light from anywhere in the front hemisphere.
    pub fn diverse() -> Self {
        Self {
            name: "diverse".into(),
            shape_palette: vec![Shape::Plane, Shape::Box, Shape::Sphere, Shape::Cylinder],
            texture_palette: vec![Texture::Flat, Texture::Stripes, Texture::Checker, Texture::Noise],
            background_palette: vec![Background::Flat, Background::Gradient, Background::Noise],
            objects_per_scene: (1, 6),
            lighting: Lighting {
                elevation_deg: Range::new(10.0, 90.0),
                azimuth_deg: Range::new(0.0, 360.0),
                ambient: Range::new(0.05, 0.6),
            },
            object_size: Range::new(0.1, 0.6),
            plane_size: Range::new(0.3, 1.2),
            plane_tilt_deg: Range::new(0.0, 75.0),
            max_rotation_deg: 180.0,
            placement: Range::new(-0.8, 0.8),
            height: 64,
            width: 64,
        }
    }

    /// Preset by name: `constrained` or `diverse`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "constrained" => Ok(Self::constrained()),
            "diverse" => Ok(Self::diverse()),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution preset `{other}` (expected constrained or diverse)"
            ))),
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    /// Number of active (shape, texture, background) combinations.
    pub fn diversity_level(&self) -> usize {
        self.shape_palette.len() * self.texture_palette.len() * self.background_palette.len()
    }

    /// True when every scene this spec can produce is also producible by
    /// `outer` (palettes are subsets and every range is nested).
    pub fn is_contained_in(&self, outer: &DistributionSpec) -> bool {
        fn subset<T: PartialEq>(a: &[T], b: &[T]) -> bool {
            a.iter().all(|x| b.contains(x))
        }
        subset(&self.shape_palette, &outer.shape_palette)
            && subset(&self.texture_palette, &outer.texture_palette)
            && subset(&self.background_palette, &outer.background_palette)
            && outer.objects_per_scene.0 <= self.objects_per_scene.0
            && self.objects_per_scene.1 <= outer.objects_per_scene.1
            && self.lighting.elevation_deg.within(&outer.lighting.elevation_deg)
            && self.lighting.azimuth_deg.within(&outer.lighting.azimuth_deg)
            && self.lighting.ambient.within(&outer.lighting.ambient)
            && self.object_size.within(&outer.object_size)
            && self.plane_size.within(&outer.plane_size)
            && self.plane_tilt_deg.within(&outer.plane_tilt_deg)
            && self.max_rotation_deg <= outer.max_rotation_deg
            && self.placement.within(&outer.placement)
            && (self.height, self.width) == (outer.height, outer.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("distribution `{}`: {msg}", self.name)));
        if self.shape_palette.is_empty() || self.texture_palette.is_empty() || self.background_palette.is_empty() {
            return bad("palettes must be non-empty");
        }
        let (lo, hi) = self.objects_per_scene;
        if lo == 0 || lo > hi {
            return bad("objects_per_scene must satisfy 1 <= lo <= hi");
        }
        let ranges = [
            &self.lighting.elevation_deg,
            &self.lighting.azimuth_deg,
            &self.lighting.ambient,
            &self.object_size,
            &self.plane_size,
            &self.plane_tilt_deg,
            &self.placement,
        ];
        if ranges.iter().any(|r| !r.is_valid()) {
            return bad("every range needs finite lo <= hi");
        }
        if self.object_size.lo <= 0.0 || self.plane_size.lo <= 0.0 {
            return bad("sizes must be positive");
        }
        if self.plane_tilt_deg.lo < 0.0 || self.plane_tilt_deg.hi >= 90.0 {
            return bad("plane tilt must lie in [0, 90)");
        }
        if !(0.0..=1.0).contains(&self.lighting.ambient.lo) || self.lighting.ambient.hi > 1.0 {
            return bad("ambient must lie in [0, 1]");
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive");
        }
        Ok(())
    }

    /// FNV-1a of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

/// One rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3, H, W]` in [0, 1].
    pub image: Tensor<f32>,
    /// `[3, H, W]` unit camera-space normals; zero on background.
    pub normals: Tensor<f32>,
    /// `[H, W]` class ids stored as floats.
    pub seg: Tensor<f32>,
    /// `[H, W]` 1 where an object covers the pixel.
    pub valid: Tensor<f32>,
}

fn random_color(rng: &mut Rng) -> Vec3 {
    [rng.range(0.1, 0.95), rng.range(0.1, 0.95), rng.range(0.1, 0.95)]
}

fn random_unit(rng: &mut Rng) -> Vec3 {
    loop {
        let v = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

fn random_rotation(rng: &mut Rng, max_deg: f64) -> Mat3 {
    let axis = random_unit(rng);
    let angle = rng.range(0.0, max_deg).to_radians();
    if angle == 0.0 {
        IDENTITY
    } else {
        axis_angle(axis, angle)
    }
}

fn sample_material(spec: &DistributionSpec, rng: &mut Rng) -> Material {
    let texture = *rng.pick(&spec.texture_palette);
    let frequency = match texture {
        Texture::Noise => rng.range(2.0, 8.0),
        _ => rng.range(1.5, 5.0),
    };
    Material {
        texture,
        color_a: random_color(rng),
        color_b: random_color(rng),
        frequency,
        direction: random_unit(rng),
        noise_seed: rng.next_u64(),
    }
}

fn sample_primitive(spec: &DistributionSpec, rng: &mut Rng) -> Primitive {
    let center = [
        spec.placement.sample(rng),
        spec.placement.sample(rng),
        rng.range(-1.0, 1.0),
    ];
    match *rng.pick(&spec.shape_palette) {
        Shape::Plane => {
            let tilt = spec.plane_tilt_deg.sample(rng).to_radians();
            let phi = rng.range(0.0, std::f64::consts::TAU);
            let normal = [tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), tilt.cos()];
            // In-plane basis: tilt the image axes along with the normal, then
            // spin them about it.
            let r = if tilt == 0.0 {
                IDENTITY
            } else {
                axis_angle([-phi.sin(), phi.cos(), 0.0], tilt)
            };
            let spin = rng.range(0.0, std::f64::consts::TAU);
            let (s, c) = spin.sin_cos();
            let ex = [r[0][0], r[1][0], r[2][0]];
            let ey = [r[0][1], r[1][1], r[2][1]];
            let u = normalize([
                c * ex[0] + s * ey[0],
                c * ex[1] + s * ey[1],
                c * ex[2] + s * ey[2],
            ]);
            let v = normalize([
                -s * ex[0] + c * ey[0],
                -s * ex[1] + c * ey[1],
                -s * ex[2] + c * ey[2],
            ]);
            Primitive::Plane {
                center,
                u,
                v,
                normal,
                half: (spec.plane_size.sample(rng), spec.plane_size.sample(rng)),
            }
        }
        Shape::Box => Primitive::Cuboid {
            center,
            rotation: random_rotation(rng, spec.max_rotation_deg),
            half: [
                spec.object_size.sample(rng),
                spec.object_size.sample(rng),
                spec.object_size.sample(rng),
            ],
        },
        Shape::Sphere => Primitive::Sphere {
            center,
            radius: spec.object_size.sample(rng),
        },
        Shape::Cylinder => {
            let rot = random_rotation(rng, spec.max_rotation_deg);
            Primitive::Cylinder {
                center,
                axis: normalize([rot[0][1], rot[1][1], rot[2][1]]),
                radius: spec.object_size.sample(rng),
                half_len: spec.object_size.sample(rng),
            }
        }
    }
}

fn sample_background(spec: &DistributionSpec, rng: &mut Rng) -> BackgroundFill {
    match *rng.pick(&spec.background_palette) {
        Background::Flat => BackgroundFill::Flat(random_color(rng)),
        Background::Gradient => {
            let theta = rng.range(0.0, std::f64::consts::TAU);
            BackgroundFill::Gradient {
                from: random_color(rng),
                to: random_color(rng),
                direction: (theta.cos(), theta.sin()),
            }
        }
        Background::Noise => BackgroundFill::Noise {
            a: random_color(rng),
            b: random_color(rng),
            frequency: rng.range(2.0, 8.0),
            seed: rng.next_u64(),
        },
    }
}

/// Draws the scene description for `seed`; pure in `(spec, seed)`.
pub fn sample_scene(spec: &DistributionSpec, seed: u64) -> Scene {
    let mut rng = Rng::new(seed);
    let (lo, hi) = spec.objects_per_scene;
    let count = rng.int_in(lo, hi);
    let objects = (0..count)
        .map(|_| {
            let primitive = sample_primitive(spec, &mut rng);
            let material = sample_material(spec, &mut rng);
            SceneObject { primitive, material }
        })
        .collect();
    let el = spec.lighting.elevation_deg.sample(&mut rng).to_radians();
    let az = spec.lighting.azimuth_deg.sample(&mut rng).to_radians();
    let light = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
    let ambient = spec.lighting.ambient.sample(&mut rng);
    let background = sample_background(spec, &mut rng);
    Scene {
        objects,
        light,
        ambient,
        background,
    }
}

/// Renders the scene drawn for `seed`.
pub fn render_scene(spec: &DistributionSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    Ok(render(&sample_scene(spec, seed), spec.height, spec.width))
}
