//! Ray-cast synthetic rooms with floating boxes and spheres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::Intrinsics;
use crate::tensor::Tensor;
use crate::unet::STRIDE;

pub const MIN_DEPTH: f64 = 0.3;
pub const MAX_DEPTH: f64 = 10.0;

/// Minimum gap between any two scene surfaces that can occlude each other.
const CLEARANCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub object_count: usize,
    /// Texture stripe cycles across the image width.
    pub texture_frequency: f64,
    pub fov_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            object_count: 3,
            texture_frequency: 2.0,
            fov_deg: 60.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % STRIDE != 0 || self.height % STRIDE != 0 {
            return Err(Error::Configuration(format!(
                "resolution {}x{} must be a positive multiple of {STRIDE}",
                self.width, self.height
            )));
        }
        if self.object_count == 0 {
            return Err(Error::Configuration("object_count must be >= 1".into()));
        }
        if !(self.texture_frequency > 0.0 && self.texture_frequency.is_finite()) {
            return Err(Error::Configuration("texture_frequency must be positive".into()));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return Err(Error::Configuration(format!("field of view {} out of range", self.fov_deg)));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov_deg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3,H,W]` in [0,1].
    pub color: Tensor,
    /// `[1,H,W]` z-depth in meters.
    pub depth: Tensor,
    /// `[3,H,W]` unit normals facing the camera.
    pub normals: Tensor,
    pub intrinsics: Intrinsics,
}

/// Per-pixel bookkeeping that is not part of a [`Sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMaps {
    /// Distinct per planar face or sphere.
    pub surface: Vec<u32>,
    /// 0 for the room, `k + 1` for object `k`.
    pub object: Vec<u32>,
    /// Texture value in [0,1] before shading.
    pub texture: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    fn bounding_sphere(&self) -> ([f64; 3], f64) {
        match *self {
            Shape::Box { min, max } => {
                let c = [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])];
                let r = (0..3).map(|i| (0.5 * (max[i] - min[i])).powi(2)).sum::<f64>().sqrt();
                (c, r)
            }
            Shape::Sphere { center, radius } => (center, radius),
        }
    }

    /// Nearest hit along `t·dir`: (t, normal, face index).
    fn intersect(&self, dir: [f64; 3]) -> Option<(f64, [f64; 3], u32)> {
        match *self {
            Shape::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for a in 0..3 {
                    if dir[a] == 0.0 {
                        if 0.0 < min[a] || 0.0 > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut n, mut f) = (min[a] / dir[a], max[a] / dir[a]);
                    if n > f {
                        std::mem::swap(&mut n, &mut f);
                    }
                    if n > t0 {
                        t0 = n;
                        axis = a;
                    }
                    t1 = t1.min(f);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut normal = [0.0; 3];
                normal[axis] = -dir[axis].signum();
                let face = 2 * axis as u32 + u32::from(dir[axis] < 0.0);
                Some((t0, normal, face))
            }
            Shape::Sphere { center, radius } => {
                let dd = dot(dir, dir);
                let b = dot(dir, center);
                let disc = b * b - dd * (dot(center, center) - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let t = (b - disc.sqrt()) / dd;
                if t <= 0.0 {
                    return None;
                }
                let p = dir.map(|d| d * t);
                let n = [
                    (p[0] - center[0]) / radius,
                    (p[1] - center[1]) / radius,
                    (p[2] - center[2]) / radius,
                ];
                Some((t, normalize(n), 0))
            }
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = dot(v, v).sqrt();
    v.map(|c| c / l)
}

/// Axis-aligned room around the camera, y pointing down.
#[derive(Clone, Copy, Debug)]
struct Room {
    floor: f64,
    ceiling: f64,
    left: f64,
    right: f64,
    back: f64,
}

impl Room {
    /// Nearest wall hit along `dir` (with `dir[2] = 1`, so `t` is z-depth).
    fn intersect(&self, dir: [f64; 3]) -> (f64, [f64; 3], u32) {
        let mut best = (self.back, [0.0, 0.0, -1.0], 0);
        let mut consider = |t: f64, n: [f64; 3], id: u32| {
            if t > 0.0 && t < best.0 {
                best = (t, n, id);
            }
        };
        if dir[1] > 0.0 {
            consider(self.floor / dir[1], [0.0, -1.0, 0.0], 1);
        }
        if dir[1] < 0.0 {
            consider(-self.ceiling / dir[1], [0.0, 1.0, 0.0], 2);
        }
        if dir[0] < 0.0 {
            consider(-self.left / dir[0], [1.0, 0.0, 0.0], 3);
        }
        if dir[0] > 0.0 {
            consider(self.right / dir[0], [-1.0, 0.0, 0.0], 4);
        }
        best
    }
}

/// Distance at which the camera-mounted point light gives unit irradiance.
const LIGHT_FALLOFF: f64 = 2.0;
const AMBIENT: f64 = 0.08;
/// Fraction of the albedo modulated by the stripe texture.
const TEXTURE_CONTRAST: f64 = 0.3;

fn sample_objects(rng: &mut ChaCha8Rng, room: &Room, spec: &SceneSpec, k: &Intrinsics) -> Vec<Shape> {
    let half_x = |z: f64| 0.8 * z * (0.5 * spec.width as f64) / k.fx;
    let half_y = |z: f64| 0.8 * z * (0.5 * spec.height as f64) / k.fy;
    let mut shapes: Vec<Shape> = Vec::with_capacity(spec.object_count);
    let mut scale = 1.0;
    while shapes.len() < spec.object_count {
        let mut placed = false;
        for _ in 0..200 {
            let size = scale * rng.random_range(0.3..0.6);
            let z = rng.random_range(1.8..room.back - 1.0 - size);
            let xr = half_x(z).min(room.right.min(room.left) - size - CLEARANCE) - size;
            let yr_top = (-half_y(z)).max(-room.ceiling + size + CLEARANCE);
            let yr_bot = half_y(z).min(room.floor - size - CLEARANCE);
            if xr <= 0.0 || yr_bot <= yr_top {
                continue;
            }
            let c = [rng.random_range(-xr..xr), rng.random_range(yr_top..yr_bot), z];
            let shape = if rng.random_bool(0.5) {
                let he: [f64; 3] = [
                    size * rng.random_range(0.6..1.0),
                    size * rng.random_range(0.6..1.0),
                    size * rng.random_range(0.6..1.0),
                ];
                Shape::Box {
                    min: [c[0] - he[0], c[1] - he[1], c[2] - he[2]],
                    max: [c[0] + he[0], c[1] + he[1], c[2] + he[2]],
                }
            } else {
                Shape::Sphere { center: c, radius: size }
            };
            let (bc, br) = shape.bounding_sphere();
            let clear = shapes.iter().all(|o| {
                let (oc, or) = o.bounding_sphere();
                let d = ((bc[0] - oc[0]).powi(2) + (bc[1] - oc[1]).powi(2) + (bc[2] - oc[2]).powi(2)).sqrt();
                d >= br + or + CLEARANCE
            });
            if clear {
                shapes.push(shape);
                placed = true;
                break;
            }
        }
        if !placed {
            scale *= 0.8;
        }
    }
    shapes
}

pub fn generate_scene_with_maps(spec: &SceneSpec) -> Result<(Sample, SceneMaps)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = rng.random_range(2.2..2.8);
    let room = Room {
        floor: rng.random_range(2.0..2.4),
        ceiling: rng.random_range(2.0..2.4),
        left: half + rng.random_range(-0.1..0.1),
        right: half + rng.random_range(-0.1..0.1),
        back: rng.random_range(4.5..5.0),
    };
    let k = spec.intrinsics();
    let shapes = sample_objects(&mut rng, &room, spec, &k);

    // Stripe texture in image space: orientation, phase and per-channel tint
    // are drawn independently of the geometry.
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
    let freq = spec.texture_frequency / spec.width as f64;

    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let mut color = Tensor::zeros([3, h, w]);
    let mut depth = Tensor::zeros([1, h, w]);
    let mut normals = Tensor::zeros([3, h, w]);
    let mut maps = SceneMaps {
        surface: vec![0; n],
        object: vec![0; n],
        texture: vec![0.0; n],
    };
    for y in 0..h {
        for x in 0..w {
            let dir = k.ray(x, y);
            let (mut t, mut nrm, mut surf) = room.intersect(dir);
            let mut obj = 0;
            for (i, s) in shapes.iter().enumerate() {
                if let Some((ts, ns, face)) = s.intersect(dir) {
                    if ts < t {
                        (t, nrm, surf, obj) = (ts, ns, 8 * (i as u32 + 1) + face, i as u32 + 1);
                    }
                }
            }
            assert!(t > 0.0 && t.is_finite(), "ray missed the enclosing room");
            let i = y * w + x;
            depth.data_mut()[i] = t;
            for c in 0..3 {
                normals.data_mut()[c * n + i] = nrm[c];
            }
            let u = (x as f64 + 0.5) * theta.cos() + (y as f64 + 0.5) * theta.sin();
            let tex = 0.5 + 0.5 * (6.0 * (std::f64::consts::TAU * freq * u + phase).sin()).tanh();
            // Lambert term of a point light at the camera, with inverse-square falloff.
            let dist = t * dot(dir, dir).sqrt();
            let cos = (-dot(nrm, dir) * t / dist).max(0.0);
            let irradiance = (cos * (LIGHT_FALLOFF / dist).powi(2)).min(1.0);
            let shade = AMBIENT + (1.0 - AMBIENT) * irradiance;
            let albedo = 1.0 - TEXTURE_CONTRAST * (1.0 - tex);
            for c in 0..3 {
                color.data_mut()[c * n + i] = shade * tint[c] * albedo;
            }
            maps.surface[i] = surf;
            maps.object[i] = obj;
            maps.texture[i] = tex;
        }
    }
    Ok((
        Sample {
            color,
            depth,
            normals,
            intrinsics: k,
        },
        maps,
    ))
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Sample> {
    Ok(generate_scene_with_maps(spec)?.0)
}
