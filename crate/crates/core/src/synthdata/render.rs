//! Analytic ray casting against a union of solid tubes and joint spheres.
//!
//! Every branch is a solid finite cylinder and every bifurcation carries a
//! sphere of the parent radius. A ray leaving the camera (which sits inside
//! the union) terminates where it first exits the union; the flat ends of
//! leaf cylinders act as the cap disks, so every ray has a finite depth.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use super::tree::{AirwayTree, Vec3};
use crate::error::{ensure, Error, Result};

const PARALLEL_EPS: f64 = 1e-12;
const TOUCH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Focal length of half the image side (90 degree field of view),
    /// principal point at the centre.
    pub fn for_size(size: u32) -> Self {
        let half = size as f64 / 2.0;
        CameraIntrinsics {
            fx: half,
            fy: half,
            cx: half,
            cy: half,
            width: size,
            height: size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx > 0.0 && self.fy > 0.0,
            Config,
            "focal lengths must be positive"
        );
        ensure!(
            self.width > 0
                && self.height > 0
                && (0.0..self.width as f64).contains(&self.cx)
                && (0.0..self.height as f64).contains(&self.cy),
            Config,
            "principal point must lie inside the image"
        );
        Ok(())
    }

    /// Unit ray direction in the camera frame (x right, y down, z forward)
    /// through pixel `(u, v)`; integer coordinates are pixel centres.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major rotation whose columns are the camera x, y, z axes in world
    /// coordinates.
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
}

impl Pose {
    /// Camera at `position` looking along `forward`, rolled by `roll` radians.
    pub fn looking_along(position: Vec3, forward: Vec3, roll: f64) -> Self {
        let z = forward.normalize();
        let helper = if z.y.abs() < 0.9 {
            Vec3::y()
        } else {
            Vec3::x()
        };
        let x0 = helper.cross(&z).normalize();
        let roll_rot = Rotation3::from_axis_angle(&Unit::new_normalize(z), roll);
        let x = roll_rot * x0;
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        Pose {
            rotation,
            position: [position.x, position.y, position.z],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn to_world(&self, dir_camera: &Vec3) -> Vec3 {
        self.matrix() * dir_camera
    }

    /// Same pose mirrored left-right in the image (camera x axis negated).
    pub fn mirrored_x(&self) -> Self {
        let mut out = *self;
        for row in out.rotation.iter_mut() {
            row[0] = -row[0];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Cylinder {
        start: Vec3,
        axis: Vec3,
        length: f64,
        radius: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

impl Primitive {
    pub fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Primitive::Cylinder {
                start,
                axis,
                length,
                radius,
            } => {
                let w = p - start;
                let s = w.dot(&axis);
                (0.0..=length).contains(&s) && (w - axis * s).norm_squared() <= radius * radius
            }
            Primitive::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
        }
    }

    /// Parameter interval `[t0, t1]` of `origin + t * dir` inside the solid.
    pub fn interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        match *self {
            Primitive::Cylinder {
                start,
                axis,
                length,
                radius,
            } => {
                let w = origin - start;
                let wa = w.dot(&axis);
                let da = dir.dot(&axis);
                let w_perp = w - axis * wa;
                let d_perp = dir - axis * da;
                let a = d_perp.norm_squared();
                let c = w_perp.norm_squared() - radius * radius;
                let (mut t0, mut t1) = if a < PARALLEL_EPS {
                    if c > 0.0 {
                        return None;
                    }
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    let b = 2.0 * w_perp.dot(&d_perp);
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        return None;
                    }
                    let sq = disc.sqrt();
                    // numerically stable quadratic roots
                    let q = -0.5 * (b + b.signum() * sq);
                    let (r0, r1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                    (r0.min(r1), r0.max(r1))
                };
                if da.abs() < PARALLEL_EPS {
                    if !(0.0..=length).contains(&wa) {
                        return None;
                    }
                } else {
                    let s0 = -wa / da;
                    let s1 = (length - wa) / da;
                    t0 = t0.max(s0.min(s1));
                    t1 = t1.min(s0.max(s1));
                }
                (t0 <= t1).then_some((t0, t1))
            }
            Primitive::Sphere { center, radius } => {
                let w = origin - center;
                let b = w.dot(dir);
                let c = w.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                Some((-b - sq, -b + sq))
            }
        }
    }

    /// Outward surface normal at a point on the boundary.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        match *self {
            Primitive::Cylinder {
                start,
                axis,
                length,
                radius,
            } => {
                let w = p - start;
                let s = w.dot(&axis);
                let radial = w - axis * s;
                let side_gap = (radial.norm() - radius).abs();
                let cap_gap = s.abs().min((s - length).abs());
                if cap_gap < side_gap {
                    if s < length / 2.0 {
                        -axis
                    } else {
                        axis
                    }
                } else {
                    radial.normalize()
                }
            }
            Primitive::Sphere { center, .. } => (p - center).normalize(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub primitive: usize,
}

/// The solid union of an airway tree.
#[derive(Debug, Clone)]
pub struct Scene {
    primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Scene { primitives }
    }

    pub fn from_tree(tree: &AirwayTree) -> Self {
        let mut primitives = Vec::new();
        for b in tree.branches() {
            primitives.push(Primitive::Cylinder {
                start: b.start,
                axis: b.direction,
                length: b.length,
                radius: b.radius,
            });
            if !b.children.is_empty() {
                primitives.push(Primitive::Sphere {
                    center: b.end(),
                    radius: b.radius,
                });
            }
        }
        Scene { primitives }
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.primitives.iter().any(|prim| prim.contains(p))
    }

    /// Distance along the unit ray to where it leaves the union, or `None`
    /// if the origin is outside every solid.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut spans: Vec<(f64, f64, usize)> = self
            .primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.interval(origin, dir).map(|(a, b)| (a, b, i)))
            .filter(|&(_, b, _)| b > 0.0)
            .collect();
        if !spans.iter().any(|&(a, _, _)| a <= 0.0) {
            return None;
        }
        spans.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut reach = 0.0;
        let mut owner = None;
        for &(a, b, i) in &spans {
            if a > reach + TOUCH_EPS {
                break;
            }
            if b > reach {
                reach = b;
                owner = Some(i);
            }
        }
        owner.map(|primitive| Hit {
            distance: reach,
            primitive,
        })
    }

    pub fn render(
        &self,
        pose: &Pose,
        cam: &CameraIntrinsics,
        shading: &ShadingConfig,
    ) -> Result<RenderedFrame> {
        cam.validate()?;
        let origin = pose.origin();
        ensure!(
            self.contains(&origin),
            Data,
            "camera at {:?} is outside the airway",
            pose.position
        );
        let (w, h) = (cam.width, cam.height);
        let mut depth = Vec::with_capacity((w * h) as usize);
        let mut color = RgbImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let dir = pose.to_world(&cam.ray(u as f64, v as f64));
                let hit = self.cast(&origin, &dir).ok_or_else(|| {
                    Error::Numeric(format!("ray at pixel ({u}, {v}) escaped the scene"))
                })?;
                depth.push(hit.distance as f32);
                let rgb = self.shade(&origin, &dir, &hit, shading);
                color.put_pixel(u, v, Rgb(rgb.map(quantize)));
            }
        }
        Ok(RenderedFrame {
            color,
            depth: DepthMap::new(w, h, depth)?,
            pose: *pose,
            intrinsics: *cam,
        })
    }

    fn shade(&self, origin: &Vec3, dir: &Vec3, hit: &Hit, s: &ShadingConfig) -> [f64; 3] {
        let prim = &self.primitives[hit.primitive];
        let p = origin + dir * hit.distance;
        let mut n = prim.normal_at(&p);
        if n.dot(dir) > 0.0 {
            n = -n;
        }
        let cos = (-n.dot(dir)).max(0.0);
        let falloff = 1.0 / (1.0 + (hit.distance / s.falloff_mm).powi(2));
        let texture = match *prim {
            Primitive::Cylinder { start, axis, .. } => {
                let along = (p - start).dot(&axis);
                let ring = 0.5 + 0.5 * (std::f64::consts::TAU * along / s.ring_spacing_mm).sin();
                1.0 - s.texture_strength * ring.powi(4)
            }
            Primitive::Sphere { .. } => 1.0,
        } * (1.0
            + 0.5 * s.texture_strength * (0.7 * p.x + 1.3 * p.y).sin() * (0.9 * p.z).sin());
        let spec = s.specular * cos.powf(s.shininess);
        let mut rgb = [0.0; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            *out = s.gain * falloff * (s.albedo[c] * texture * s.diffuse * cos + spec);
        }
        rgb
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadingConfig {
    pub albedo: [f64; 3],
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
    /// Distance at which the headlight intensity has halved.
    pub falloff_mm: f64,
    pub gain: f64,
    pub texture_strength: f64,
    pub ring_spacing_mm: f64,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        ShadingConfig {
            albedo: [0.9, 0.55, 0.5],
            diffuse: 1.0,
            specular: 0.35,
            shininess: 24.0,
            falloff_mm: 25.0,
            gain: 1.1,
            texture_strength: 0.25,
            ring_spacing_mm: 4.0,
        }
    }
}

/// Single-channel depth raster in millimetres, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == (width as usize) * (height as usize),
            Data,
            "depth map has {} values for {width}x{height}",
            data.len()
        );
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            })
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width as usize;
        let data = self
            .data
            .chunks(w)
            .flat_map(|row| row.iter().rev().copied())
            .collect();
        DepthMap { data, ..*self }
    }

    pub fn flip_vertical(&self) -> Self {
        let w = self.width as usize;
        let data = self.data.chunks(w).rev().flatten().copied().collect();
        DepthMap { data, ..*self }
    }
}

/// A labeled (colour, depth) rendering of the synthetic domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub color: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

pub fn render_frame(
    tree: &AirwayTree,
    pose: &Pose,
    cam: &CameraIntrinsics,
    shading: &ShadingConfig,
) -> Result<RenderedFrame> {
    Scene::from_tree(tree).render(pose, cam, shading)
}
