use std::collections::BTreeSet;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::perturb::PerturbOptions;
use crate::camera::{CameraIntrinsics, CameraPose, DEFAULT_DEPTH_DIVISOR};
use crate::error::{Error, Result};
use crate::gridpool::DEFAULT_VOXEL_SIZE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    /// Axis-aligned box.
    Box {
        instance: u32,
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Parallelogram `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`.
    Plane {
        instance: u32,
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
}

impl Primitive {
    pub fn instance(&self) -> u32 {
        match self {
            Primitive::Box { instance, .. } | Primitive::Plane { instance, .. } => *instance,
        }
    }

    /// Nearest positive ray parameter at which `origin + t·dir` hits the surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Box { min, max, .. } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[a] - origin[a]) / dir[a];
                    let t1 = (max[a] - origin[a]) / dir[a];
                    t_near = t_near.max(t0.min(t1));
                    t_far = t_far.min(t0.max(t1));
                }
                (t_near <= t_far && t_near > 1e-9).then_some(t_near)
            }
            Primitive::Plane {
                origin: o,
                edge_u,
                edge_v,
                ..
            } => {
                let (o, eu, ev) = (Vector3::from(*o), Vector3::from(*edge_u), Vector3::from(*edge_v));
                let n = eu.cross(&ev);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(o - origin)) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let p = origin + dir * t - o;
                let gram = Matrix3::new(
                    eu.dot(&eu), eu.dot(&ev), 0.0, //
                    eu.dot(&ev), ev.dot(&ev), 0.0, //
                    0.0, 0.0, 1.0,
                );
                let ab = gram.try_inverse()? * Vector3::new(p.dot(&eu), p.dot(&ev), 0.0);
                let inside = |c: f64| (-1e-12..=1.0 + 1e-12).contains(&c);
                (inside(ab.x) && inside(ab.y)).then_some(t)
            }
        }
    }

    /// Distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Box { min, max, .. } => {
                let (lo, hi) = (Vector3::from(*min), Vector3::from(*max));
                let outside = (lo - p).sup(&(p - hi)).sup(&Vector3::zeros());
                if outside.norm() > 0.0 {
                    outside.norm()
                } else {
                    (p - lo).min().min((hi - p).min())
                }
            }
            Primitive::Plane {
                origin,
                edge_u,
                edge_v,
                ..
            } => {
                let (o, eu, ev) = (
                    Vector3::from(*origin),
                    Vector3::from(*edge_u),
                    Vector3::from(*edge_v),
                );
                // Dense sampling is enough for a test-side distance; project
                // onto the plane and clamp in parameter space.
                let n = eu.cross(&ev).normalize();
                let d = p - o;
                let gram = nalgebra::Matrix2::new(eu.dot(&eu), eu.dot(&ev), eu.dot(&ev), ev.dot(&ev));
                let ab = gram
                    .try_inverse()
                    .map(|g| g * nalgebra::Vector2::new(d.dot(&eu), d.dot(&ev)))
                    .unwrap_or_default();
                let (a, b) = (ab.x.clamp(0.0, 1.0), ab.y.clamp(0.0, 1.0));
                let q = o + eu * a + ev * b;
                if a == ab.x && b == ab.y {
                    d.dot(&n).abs()
                } else {
                    (p - q).norm()
                }
            }
        }
    }
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Look-at camera: optical axis from `eye` toward `target`, image "up" toward
/// `up` (camera y points down, x right, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

impl CameraSpec {
    pub fn world_from_camera(&self) -> Result<Matrix4<f64>> {
        let eye = Vector3::from(self.eye);
        let fwd = Vector3::from(self.target) - eye;
        let up = Vector3::from(self.up);
        if fwd.norm() < 1e-12 {
            return Err(Error::validation("eye", "eye and target coincide"));
        }
        let fwd = fwd.normalize();
        let right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::validation("up", "up is parallel to the view direction"));
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&fwd);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        Ok(m)
    }

    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::from_world_from_camera(&self.world_from_camera()?)
    }
}

/// Pipeline geometry settings that `gt.ply` is aligned with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceGeometry {
    pub voxel_size: f64,
    pub stride: u32,
    pub pool_after_merge: bool,
}

impl Default for ReferenceGeometry {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
            stride: 1,
            pool_after_merge: true,
        }
    }
}

fn default_divisor() -> f64 {
    DEFAULT_DEPTH_DIVISOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_divisor")]
    pub depth_divisor: f64,
    #[serde(default)]
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub perturb: PerturbOptions,
    #[serde(default)]
    pub reference: ReferenceGeometry,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::eight_boxes(16)
    }
}

impl SceneSpec {
    /// Eight separated boxes of assorted sizes seen by `poses` cameras on an
    /// elevated orbit.
    pub fn eight_boxes(poses: usize) -> Self {
        let layout: [([f64; 2], [f64; 3]); 8] = [
            ([-1.3, -0.9], [0.50, 0.40, 0.45]),
            ([-0.2, -1.1], [0.35, 0.55, 0.30]),
            ([0.9, -0.8], [0.45, 0.45, 0.60]),
            ([1.3, 0.3], [0.40, 0.30, 0.35]),
            ([0.6, 1.2], [0.55, 0.40, 0.50]),
            ([-0.5, 1.0], [0.30, 0.45, 0.40]),
            ([-1.4, 0.4], [0.40, 0.50, 0.55]),
            ([0.1, 0.05], [0.45, 0.35, 0.70]),
        ];
        let primitives = layout
            .iter()
            .enumerate()
            .map(|(i, ([x, y], [sx, sy, sz]))| Primitive::Box {
                instance: i as u32 + 1,
                min: [x - sx / 2.0, y - sy / 2.0, 0.0],
                max: [x + sx / 2.0, y + sy / 2.0, *sz],
            })
            .collect();
        Self {
            width: 160,
            height: 120,
            intrinsics: CameraIntrinsics {
                fx: 120.0,
                fy: 120.0,
                cx: 79.5,
                cy: 59.5,
            },
            depth_divisor: DEFAULT_DEPTH_DIVISOR,
            seed: 7,
            primitives,
            cameras: Self::orbit(poses, 3.6, 2.2, [0.0, 0.0, 0.3]),
            perturb: PerturbOptions::default(),
            reference: ReferenceGeometry::default(),
        }
    }

    /// `n` cameras evenly spaced on a horizontal circle, all looking at `target`.
    pub fn orbit(n: usize, radius: f64, height: f64, target: [f64; 3]) -> Vec<CameraSpec> {
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                CameraSpec {
                    eye: [radius * a.cos(), radius * a.sin(), height],
                    target,
                    up: default_up(),
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("width", "image size must be nonzero"));
        }
        self.intrinsics
            .validate()
            .map_err(|e| Error::validation("intrinsics", e.to_string()))?;
        if !(self.depth_divisor > 0.0 && self.depth_divisor.is_finite()) {
            return Err(Error::validation("depth_divisor", "must be positive"));
        }
        if self.primitives.is_empty() {
            return Err(Error::validation("primitives", "at least one primitive is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, p) in self.primitives.iter().enumerate() {
            let path = format!("primitives[{i}]");
            if p.instance() == 0 {
                return Err(Error::validation(format!("{path}.instance"), "must be ≥ 1"));
            }
            if p.instance() > u16::MAX as u32 {
                return Err(Error::validation(format!("{path}.instance"), "must fit in 16 bits"));
            }
            if !ids.insert(p.instance()) {
                return Err(Error::validation(
                    format!("{path}.instance"),
                    format!("duplicate instance id {}", p.instance()),
                ));
            }
            match p {
                Primitive::Box { min, max, .. } => {
                    if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
                        return Err(Error::validation(
                            format!("{path}.max"),
                            "each max coordinate must exceed min",
                        ));
                    }
                }
                Primitive::Plane { edge_u, edge_v, .. } => {
                    let n = Vector3::from(*edge_u).cross(&Vector3::from(*edge_v));
                    if !(n.norm() > 1e-12) {
                        return Err(Error::validation(
                            format!("{path}.edge_v"),
                            "edges must be non-degenerate and non-parallel",
                        ));
                    }
                }
            }
        }
        if self.cameras.is_empty() {
            return Err(Error::validation("cameras", "at least one camera pose is required"));
        }
        for (i, c) in self.cameras.iter().enumerate() {
            c.pose().map_err(|e| {
                let detail = match e {
                    Error::Validation { path, msg } => format!("{path}: {msg}"),
                    other => other.to_string(),
                };
                Error::validation(format!("cameras[{i}]"), detail)
            })?;
        }
        self.perturb.validate()?;
        if !(self.reference.voxel_size > 0.0) {
            return Err(Error::validation("reference.voxel_size", "must be positive"));
        }
        if self.reference.stride == 0 {
            return Err(Error::validation("reference.stride", "must be at least 1"));
        }
        Ok(())
    }

    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.primitives.iter().map(Primitive::instance).collect()
    }
}
