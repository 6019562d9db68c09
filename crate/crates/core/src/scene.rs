//! Analytic textured scenes: planes, spheres and an enclosing background
//! sphere, with exact ray casting for rendering, ground-truth depth and
//! visibility queries.

use rayon::prelude::*;

use crate::geometry::{unproject_pixel, PanoramaGeometry, PixelCoord, Pose, Vec3};
use crate::raster::{DepthMap, Panorama, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Points with `normal · p = offset`.
    Plane { normal: Vec3, offset: f64 },
    /// Solid sphere seen from outside.
    Sphere { center: Vec3, radius: f64 },
    /// Sphere seen from inside, used as a textured backdrop.
    Enclosure { center: Vec3, radius: f64 },
}

const EPS: f64 = 1e-9;

impl Shape {
    /// Smallest ray parameter `t > EPS` where `origin + t dir` meets the
    /// shape. `dir` need not be normalized.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match *self {
            Shape::Plane { normal, offset } => {
                let den = normal.dot(dir);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - normal.dot(origin)) / den;
                (t > EPS).then_some(t)
            }
            Shape::Sphere { center, radius } | Shape::Enclosure { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let (t0, t1) = ((-b - s) / a, (-b + s) / a);
                match self {
                    Shape::Enclosure { .. } => (t1 > EPS).then_some(t1),
                    _ if t0 > EPS => Some(t0),
                    _ => None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub shapes: Vec<Shape>,
    pub seed: u64,
    /// Noise lattice frequency of the coarsest octave, cells per meter.
    pub frequency: f64,
}

fn hash(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 29;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(p: &Vec3, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let t = p - f;
    let (ix, iy, iz) = (f.x as i64, f.y as i64, f.z as i64);
    let (sx, sy, sz) = (smooth(t.x), smooth(t.y), smooth(t.z));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = if dx == 1 { sx } else { 1.0 - sx }
                    * if dy == 1 { sy } else { 1.0 - sy }
                    * if dz == 1 { sz } else { 1.0 - sz };
                acc += w * hash(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

impl Scene {
    /// A floor 1.2 m below the rig, a 0.6 m sphere off to one side and a
    /// textured backdrop of radius 4 m around the origin.
    pub fn demo() -> Self {
        Self {
            shapes: vec![
                Shape::Plane {
                    normal: Vec3::y(),
                    offset: -1.2,
                },
                Shape::Sphere {
                    center: Vec3::new(1.5, 0.2, 1.8),
                    radius: 0.6,
                },
                Shape::Enclosure {
                    center: Vec3::zeros(),
                    radius: 4.0,
                },
            ],
            seed: 17,
            frequency: 6.0,
        }
    }

    /// Nearest hit as `(distance along the unit ray, shape index)`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let d = dir.normalize();
        self.shapes
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.intersect(origin, &d).map(|t| (t, k)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Albedo in `[0, 1]` of shape `k` at `p`: three octaves of value noise.
    pub fn albedo(&self, k: usize, p: &Vec3) -> f64 {
        let seed = self.seed.wrapping_add(k as u64 * 0x51ED_270B);
        let mut v = 0.0;
        let mut f = self.frequency;
        for (o, amp) in [0.5, 0.3, 0.2].iter().enumerate() {
            v += amp * value_noise(&(p * f), seed.wrapping_add(o as u64));
            f *= 2.17;
        }
        v
    }

    /// Whether the segment from `from` to `to` is free of other surfaces.
    pub fn visible(&self, from: &Vec3, to: &Vec3) -> bool {
        let d = to - from;
        let dist = d.norm();
        match self.cast(from, &d) {
            Some((t, _)) => t >= dist * (1.0 - 1e-7) - 1e-9,
            None => true,
        }
    }

    /// Grayscale panorama seen by a camera, averaging `samples x samples`
    /// rays per pixel.
    pub fn render(&self, pose: &Pose, g: &PanoramaGeometry, samples: usize) -> Panorama {
        let s = samples.max(1);
        let origin = pose.center();
        let w = g.width;
        let mut data = vec![0.0f32; g.len()];
        let mut mask = vec![true; g.len()];
        data.par_chunks_mut(w)
            .zip(mask.par_chunks_mut(w))
            .enumerate()
            .for_each(|(i, (row, ok))| {
                for j in 0..w {
                    let mut acc = 0.0;
                    for a in 0..s {
                        for b in 0..s {
                            let px = PixelCoord::new(
                                j as f64 + (b as f64 + 0.5) / s as f64,
                                i as f64 + (a as f64 + 0.5) / s as f64,
                            );
                            let ray = pose.rotation * unproject_pixel(px, g);
                            match self.cast(&origin, &ray) {
                                Some((t, k)) => acc += self.albedo(k, &(origin + ray * t)),
                                None => ok[j] = false,
                            }
                        }
                    }
                    row[j] = (acc / (s * s) as f64) as f32;
                }
            });
        Panorama {
            geometry: *g,
            channels: 1,
            data,
            mask: Some(mask),
        }
    }

    /// Euclidean distance along each pixel-center ray.
    pub fn depth_map(&self, pose: &Pose, g: &PanoramaGeometry) -> DepthMap {
        let origin = pose.center();
        let rows: Vec<Vec<Option<f32>>> = (0..g.height)
            .into_par_iter()
            .map(|i| {
                (0..g.width)
                    .map(|j| {
                        let ray = pose.rotation * unproject_pixel(PixelCoord::center(i, j), g);
                        self.cast(&origin, &ray).map(|(t, _)| t as f32)
                    })
                    .collect()
            })
            .collect();
        ScalarMap::from_fn(*g, |i, j| rows[i][j])
    }

    /// World point seen through the center of pixel `(row, col)`.
    pub fn hit_point(&self, pose: &Pose, g: &PanoramaGeometry, row: usize, col: usize) -> Option<Vec3> {
        let origin = pose.center();
        let ray = pose.rotation * unproject_pixel(PixelCoord::center(row, col), g);
        self.cast(&origin, &ray).map(|(t, _)| origin + ray.normalize() * t)
    }
}

/// Four cameras on a horizontal 1 m square, axes aligned with the world.
pub fn square_rig() -> Vec<Pose> {
    [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
        .iter()
        .map(|&(x, z)| Pose::from_translation(Vec3::new(x, 0.0, z)))
        .collect()
}

/// Three cameras on a vertical right triangle with 1 m legs.
pub fn triangle_rig() -> Vec<Pose> {
    [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
        .iter()
        .map(|&(x, y)| Pose::from_translation(Vec3::new(x - 0.3, y - 0.3, 0.0)))
        .collect()
}
