//! Orthographic ray caster over analytic primitives.
//!
//! Camera coordinates: `x` to the right (image columns), `y` down (image
//! rows), `z` toward the viewer. Pixel `(r, c)` of an `H x W` image sees the
//! ray through `x = (c + 0.5) / W * 2 - 1`, `y = (r + 0.5) / H * 2 - 1`,
//! travelling in `-z`. Visible normals therefore have `n_z >= 0`.

use super::{Sample, SegClass, Texture};
use crate::tensor::Tensor;

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    scale(a, 1.0 / n)
}

/// Row-major 3x3 rotation; columns are the local axes in camera space.
pub type Mat3 = [[f64; 3]; 3];

pub(crate) const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mul(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mul_t(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Rodrigues rotation about a unit axis.
pub(crate) fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let [x, y, z] = normalize(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Rectangle spanned by `u`, `v` around `center`, facing `normal`.
    Plane {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        normal: Vec3,
        half: (f64, f64),
    },
    Cuboid {
        center: Vec3,
        rotation: Mat3,
        half: Vec3,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Capped cylinder around a unit `axis`.
    Cylinder {
        center: Vec3,
        axis: Vec3,
        radius: f64,
        half_len: f64,
    },
}

impl Primitive {
    pub fn class(&self) -> SegClass {
        match self {
            Primitive::Plane { .. } => SegClass::Plane,
            Primitive::Cuboid { .. } => SegClass::Box,
            Primitive::Sphere { .. } => SegClass::Sphere,
            Primitive::Cylinder { .. } => SegClass::Cylinder,
        }
    }

    /// Nearest camera-facing hit of the ray through `(x, y)`: `(z, normal)`.
    pub fn intersect(&self, x: f64, y: f64) -> Option<(f64, Vec3)> {
        let dir = [0.0, 0.0, -1.0];
        match *self {
            Primitive::Sphere { center, radius } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let d2 = dx * dx + dy * dy;
                if d2 > radius * radius {
                    return None;
                }
                let dz = (radius * radius - d2).sqrt();
                Some((center[2] + dz, [dx / radius, dy / radius, dz / radius]))
            }
            Primitive::Plane {
                center,
                u,
                v,
                normal,
                half,
            } => {
                if normal[2] <= 1e-9 {
                    return None;
                }
                let z = center[2] - (normal[0] * (x - center[0]) + normal[1] * (y - center[1])) / normal[2];
                let rel = sub([x, y, z], center);
                if dot(rel, u).abs() > half.0 || dot(rel, v).abs() > half.1 {
                    return None;
                }
                Some((z, normal))
            }
            Primitive::Cuboid { center, rotation, half } => {
                // Start just in front of the bounding sphere to keep `t` small.
                let z0 = center[2] + dot(half, half).sqrt() + 1.0;
                let o = mul_t(&rotation, sub([x, y, z0], center));
                let d = mul_t(&rotation, dir);
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut entry = (0usize, 0.0f64);
                for i in 0..3 {
                    if d[i].abs() < 1e-12 {
                        if o[i].abs() > half[i] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[i] - o[i]) / d[i];
                    let t2 = (half[i] - o[i]) / d[i];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        entry = (i, -d[i].signum());
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_far < 0.0 {
                    return None;
                }
                let mut local = [0.0; 3];
                local[entry.0] = entry.1;
                Some((z0 - t_near, mul(&rotation, local)))
            }
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_len,
            } => {
                let z0 = center[2] + radius + half_len + 1.0;
                let w = sub([x, y, z0], center);
                let (wa, da) = (dot(w, axis), dot(dir, axis));
                let w_perp = sub(w, scale(axis, wa));
                let d_perp = sub(dir, scale(axis, da));
                let mut best: Option<(f64, Vec3)> = None;
                let mut consider = |t: f64, n: Vec3| {
                    if t >= 0.0 && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, n));
                    }
                };
                let a = dot(d_perp, d_perp);
                if a > 1e-12 {
                    let b = 2.0 * dot(w_perp, d_perp);
                    let c = dot(w_perp, w_perp) - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        if (wa + t * da).abs() <= half_len {
                            let radial = add(w_perp, scale(d_perp, t));
                            consider(t, scale(radial, 1.0 / radius));
                        }
                    }
                }
                if da.abs() > 1e-12 {
                    for s in [-1.0, 1.0] {
                        let t = (s * half_len - wa) / da;
                        let q = add(w_perp, scale(d_perp, t));
                        if dot(q, q) <= radius * radius {
                            consider(t, scale(axis, s));
                        }
                    }
                }
                best.map(|(t, n)| (z0 - t, n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub texture: Texture,
    pub color_a: Vec3,
    pub color_b: Vec3,
    pub frequency: f64,
    pub direction: Vec3,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub primitive: Primitive,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundFill {
    Flat(Vec3),
    /// Linear blend from `from` to `to` along an image-space direction.
    Gradient { from: Vec3, to: Vec3, direction: (f64, f64) },
    Noise { a: Vec3, b: Vec3, frequency: f64, seed: u64 },
}

/// Fully specified scene; rendering it is a pure function.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    /// Unit vector toward the light.
    pub light: Vec3,
    pub ambient: f64,
    pub background: BackgroundFill,
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x51_7cc1_b727_220a;
    for v in [ix, iy, iz] {
        h ^= v as u64;
        h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 29;
    }
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinearly interpolated lattice noise in [0, 1].
fn value_noise(p: Vec3, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (bx, by, bz) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { s[0] } else { 1.0 - s[0] })
                    * (if dy == 1 { s[1] } else { 1.0 - s[1] })
                    * (if dz == 1 { s[2] } else { 1.0 - s[2] });
                acc += w * lattice(bx + dx, by + dy, bz + dz, seed);
            }
        }
    }
    acc
}

fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

impl Material {
    fn albedo(&self, p: Vec3) -> Vec3 {
        match self.texture {
            Texture::Flat => self.color_a,
            Texture::Stripes => {
                let s = (std::f64::consts::TAU * self.frequency * dot(p, self.direction)).sin();
                if s >= 0.0 {
                    self.color_a
                } else {
                    self.color_b
                }
            }
            Texture::Checker => {
                let q = scale(p, self.frequency).map(f64::floor);
                if (q[0] + q[1] + q[2]).rem_euclid(2.0) < 1.0 {
                    self.color_a
                } else {
                    self.color_b
                }
            }
            Texture::Noise => lerp(
                self.color_a,
                self.color_b,
                value_noise(scale(p, self.frequency), self.noise_seed),
            ),
        }
    }
}

impl BackgroundFill {
    fn color(&self, x: f64, y: f64) -> Vec3 {
        match self {
            BackgroundFill::Flat(c) => *c,
            BackgroundFill::Gradient { from, to, direction } => {
                let t = ((x * direction.0 + y * direction.1) * 0.5 + 0.5).clamp(0.0, 1.0);
                lerp(*from, *to, t)
            }
            BackgroundFill::Noise { a, b, frequency, seed } => {
                lerp(*a, *b, value_noise([x * frequency, y * frequency, 0.5], *seed))
            }
        }
    }
}

/// Renders image, normals, class map and validity mask.
pub fn render(scene: &Scene, height: usize, width: usize) -> Sample {
    let plane = height * width;
    let mut image = vec![0.0f32; 3 * plane];
    let mut normals = vec![0.0f32; 3 * plane];
    let mut seg = vec![0.0f32; plane];
    let mut valid = vec![0.0f32; plane];
    for r in 0..height {
        for c in 0..width {
            let x = (c as f64 + 0.5) / width as f64 * 2.0 - 1.0;
            let y = (r as f64 + 0.5) / height as f64 * 2.0 - 1.0;
            let hit = scene
                .objects
                .iter()
                .filter_map(|o| o.primitive.intersect(x, y).map(|(z, n)| (z, n, o)))
                .fold(None, |best: Option<(f64, Vec3, &SceneObject)>, h| match best {
                    Some(b) if b.0 >= h.0 => Some(b),
                    _ => Some(h),
                });
            let i = r * width + c;
            let color = match hit {
                Some((z, n, obj)) => {
                    let mut n = normalize(n);
                    if n[2] < 0.0 {
                        // Grazing entry points can come out a hair negative.
                        n[2] = 0.0;
                        n = normalize(n);
                    }
                    let albedo = obj.material.albedo([x, y, z]);
                    let shade = scene.ambient + (1.0 - scene.ambient) * dot(n, scene.light).max(0.0);
                    for k in 0..3 {
                        normals[k * plane + i] = n[k] as f32;
                    }
                    seg[i] = obj.primitive.class() as u8 as f32;
                    valid[i] = 1.0;
                    scale(albedo, shade)
                }
                None => scene.background.color(x, y),
            };
            for k in 0..3 {
                image[k * plane + i] = color[k].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Sample {
        image: Tensor::new(vec![3, height, width], image).expect("image shape"),
        normals: Tensor::new(vec![3, height, width], normals).expect("normals shape"),
        seg: Tensor::new(vec![height, width], seg).expect("seg shape"),
        valid: Tensor::new(vec![height, width], valid).expect("valid shape"),
    }
}
