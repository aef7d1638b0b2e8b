//! Pinhole camera model: back-projection of depth pixels into world space and
//! the matching forward projection.
//!
//! A [`CameraPose`] stores the world→camera extrinsics `(R, T)`, so a world
//! point `X` lands in the camera frame at `R·X + T`. Back-projection inverts
//! that: `X = R⁻¹·K⁻¹·d·[u, v, 1]ᵀ − R⁻¹·T` with `d` the metric depth of the
//! pixel. Pose files on disk hold the inverse (world-from-camera) matrix; use
//! [`CameraPose::from_world_from_camera`] for those.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

const ROTATION_TOL: f64 = 1e-6;

/// Default maximum valid depth in meters.
pub const DEFAULT_MAX_DEPTH: f64 = 10.0;

/// Default raw depth units per meter (millimeter depth PNGs).
pub const DEFAULT_DEPTH_DIVISOR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Reads fx, fy, cx, cy out of a 4×4 (or 3×3 upper-left) calibration matrix.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        Self::new(m[(0, 0)], m[(1, 1)], m[(0, 2)], m[(1, 2)])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// 4×4 homogeneous form, as written to `intrinsic.txt`.
    pub fn matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.matrix());
        m
    }
}

/// World→camera rigid transform. The rotation is validated on construction,
/// so every `CameraPose` in circulation is orthonormal with determinant 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {max_dev:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds the extrinsics from a world-from-camera matrix (camera-to-world,
    /// the ScanNet on-disk convention).
    pub fn from_world_from_camera(m: &Matrix4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-6 {
            return Err(Error::InvalidPose("last row must be [0 0 0 1]".into()));
        }
        let r_wc: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let t_wc: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into();
        let rotation = r_wc.transpose();
        let translation = -(rotation * t_wc);
        Self::new(rotation, translation)
    }

    pub fn world_from_camera(&self) -> Matrix4<f64> {
        let r_wc = self.rotation.transpose();
        let t_wc = -(r_wc * self.translation);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_wc);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t_wc);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn world_to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Composes a world-space rigid motion onto this pose: if world points move
    /// by `X' = A·X + b`, the returned pose sees `X'` exactly as `self` saw `X`.
    pub fn moved_by(&self, a: &Matrix3<f64>, b: &Vector3<f64>) -> Result<Self> {
        let rotation = self.rotation * a.transpose();
        let translation = self.translation - rotation * b;
        Self::new(rotation, translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub u: u32,
    pub v: u32,
}

impl PixelCoord {
    pub fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }
}

/// A fractional pixel position plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// A raw 16-bit depth image. Raw value 0 means "no measurement".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<u16>,
    /// Raw units per meter.
    pub depth_divisor: f64,
    /// Depths beyond this range (meters) are treated as invalid.
    pub max_depth: f64,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, depth: Vec<u16>) -> Result<Self> {
        let frame = Self {
            width,
            height,
            depth,
            depth_divisor: DEFAULT_DEPTH_DIVISOR,
            max_depth: DEFAULT_MAX_DEPTH,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn with_divisor(mut self, depth_divisor: f64) -> Self {
        self.depth_divisor = depth_divisor;
        self
    }

    pub fn with_max_depth(mut self, max_depth: f64) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize;
        if self.depth.len() != expected {
            return Err(Error::MalformedFrame(format!(
                "depth has {} values, expected {}×{} = {expected}",
                self.depth.len(),
                self.width,
                self.height
            )));
        }
        if !(self.depth_divisor > 0.0 && self.depth_divisor.is_finite()) {
            return Err(Error::MalformedFrame(format!(
                "depth divisor must be positive, got {}",
                self.depth_divisor
            )));
        }
        if self.max_depth.is_nan() || self.max_depth <= 0.0 {
            return Err(Error::MalformedFrame(format!(
                "max depth must be positive, got {}",
                self.max_depth
            )));
        }
        Ok(())
    }

    /// Metric depth at a pixel, or `None` when the raw value is invalid.
    pub fn metric_depth(&self, pix: PixelCoord) -> Option<f64> {
        let raw = self.depth[pix.v as usize * self.width as usize + pix.u as usize];
        self.raw_to_meters(raw)
    }

    fn raw_to_meters(&self, raw: u16) -> Option<f64> {
        if raw == 0 {
            return None;
        }
        let d = raw as f64 / self.depth_divisor;
        (d <= self.max_depth).then_some(d)
    }
}

/// Back-projects one pixel at metric depth `depth_m` into world space.
pub fn unproject_pixel(
    pix: PixelCoord,
    depth_m: f64,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Point3> {
    if !(depth_m > 0.0 && depth_m.is_finite()) {
        return Err(Error::InvalidDepth(depth_m));
    }
    let cam = Vector3::new(
        (pix.u as f64 - intr.cx) / intr.fx * depth_m,
        (pix.v as f64 - intr.cy) / intr.fy * depth_m,
        depth_m,
    );
    Ok(Point3::from(
        pose.rotation.transpose() * (cam - pose.translation),
    ))
}

/// Back-projects every valid pixel on the `stride` lattice, in row-major order.
pub fn unproject_frame(
    frame: &DepthFrame,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    stride: u32,
) -> Result<Vec<(PixelCoord, Point3)>> {
    frame.validate()?;
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let r_inv = pose.rotation.transpose();
    let offset = -(r_inv * pose.translation);
    let step = stride as usize;
    let xs: Vec<(u32, f64)> = (0..frame.width)
        .step_by(step)
        .map(|u| (u, (u as f64 - intr.cx) / intr.fx))
        .collect();

    let rows: Vec<u32> = (0..frame.height).step_by(step).collect();
    let per_row: Vec<Vec<(PixelCoord, Point3)>> = rows
        .par_iter()
        .map(|&v| {
            let y = (v as f64 - intr.cy) / intr.fy;
            let row = &frame.depth[v as usize * frame.width as usize..][..frame.width as usize];
            xs.iter()
                .filter_map(|&(u, x)| {
                    let d = frame.raw_to_meters(row[u as usize])?;
                    let cam = Vector3::new(x * d, y * d, d);
                    Some((PixelCoord::new(u, v), Point3::from(r_inv * cam + offset)))
                })
                .collect()
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

/// Forward model: world point → fractional pixel and camera depth. Returns
/// `None` for points at or behind the camera plane.
pub fn project_point(p: &Point3, intr: &CameraIntrinsics, pose: &CameraPose) -> Option<Projection> {
    let cam = pose.world_to_camera(p);
    if !(cam.z > 0.0) {
        return None;
    }
    Some(Projection {
        u: intr.fx * cam.x / cam.z + intr.cx,
        v: intr.fy * cam.y / cam.z + intr.cy,
        depth: cam.z,
    })
}

/// Inverse of [`project_point`] for fractional pixel coordinates.
pub fn unproject_projection(
    proj: &Projection,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Point3> {
    if !(proj.depth > 0.0 && proj.depth.is_finite()) {
        return Err(Error::InvalidDepth(proj.depth));
    }
    let cam = Vector3::new(
        (proj.u - intr.cx) / intr.fx * proj.depth,
        (proj.v - intr.cy) / intr.fy * proj.depth,
        proj.depth,
    );
    Ok(Point3::from(
        pose.rotation.transpose() * (cam - pose.translation),
    ))
}
