//! Voxel-grid downsampling of labeled clouds.
//!
//! Voxels are anchored at the world origin, so pooled clouds from different
//! frames share one lattice. Each occupied voxel yields its centroid and the
//! majority nonzero label of its members.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lift::{CloudPoint, LabeledCloud};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoolConfig {
    pub voxel_size: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
        }
    }
}

impl PoolConfig {
    pub fn new(voxel_size: f64) -> Result<Self> {
        let cfg = Self { voxel_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub fn of(p: &CloudPoint, voxel_size: f64) -> Self {
        Self {
            ix: cell(p.x, voxel_size),
            iy: cell(p.y, voxel_size),
            iz: cell(p.z, voxel_size),
        }
    }
}

#[inline]
fn cell(c: f32, voxel_size: f64) -> i64 {
    (c as f64 / voxel_size).floor() as i64
}

/// Nudges a coordinate by single-precision ulps until it falls in cell `target`.
fn snap_into_cell(mut c: f32, target: i64, voxel_size: f64) -> f32 {
    while cell(c, voxel_size) < target {
        c = c.next_up();
    }
    while cell(c, voxel_size) > target {
        c = c.next_down();
    }
    c
}

/// Majority nonzero label; ties go to the smaller id, and 0 only when every
/// member is unlabeled. `labels` must be sorted.
fn majority_label(sorted: &[u32]) -> u32 {
    let mut best = (0usize, 0u32);
    let mut i = 0;
    while i < sorted.len() {
        let l = sorted[i];
        let run = sorted[i..].iter().take_while(|&&x| x == l).count();
        if l != 0 && run > best.0 {
            best = (run, l);
        }
        i += run;
    }
    best.1
}

/// Downsamples to one point per occupied voxel, ordered by [`VoxelKey`].
pub fn grid_pool(cloud: &LabeledCloud, cfg: &PoolConfig) -> Result<LabeledCloud> {
    cfg.validate()?;
    let vs = cfg.voxel_size;
    let mut keyed: Vec<(VoxelKey, usize)> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| (VoxelKey::of(p, vs), i))
        .collect();
    keyed.par_sort_unstable();

    let mut starts: Vec<usize> = Vec::new();
    for (i, w) in keyed.iter().enumerate() {
        if i == 0 || keyed[i - 1].0 != w.0 {
            starts.push(i);
        }
    }
    starts.push(keyed.len());

    let pooled: Vec<(CloudPoint, u32)> = starts
        .par_windows(2)
        .map(|w| {
            let members = &keyed[w[0]..w[1]];
            let key = members[0].0;
            let mut sum = [0f64; 3];
            let mut labels: Vec<u32> = Vec::with_capacity(members.len());
            for &(_, i) in members {
                let p = &cloud.points[i];
                sum[0] += p.x as f64;
                sum[1] += p.y as f64;
                sum[2] += p.z as f64;
                labels.push(cloud.labels[i]);
            }
            let n = members.len() as f64;
            let centroid = CloudPoint::new(
                snap_into_cell((sum[0] / n) as f32, key.ix, vs),
                snap_into_cell((sum[1] / n) as f32, key.iy, vs),
                snap_into_cell((sum[2] / n) as f32, key.iz, vs),
            );
            labels.sort_unstable();
            (centroid, majority_label(&labels))
        })
        .collect();

    let (points, labels) = pooled.into_iter().unzip();
    Ok(LabeledCloud { points, labels })
}
