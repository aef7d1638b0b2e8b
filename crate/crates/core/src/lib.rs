//! Lift per-frame 2D instance masks from posed RGB-D frames into 3D point
//! clouds and fuse them into scene-level instance masks.
//!
//! The flow is `lift` (back-project each frame's masks) → `gridpool`
//! (voxel downsampling) → `merge` (pairwise bidirectional merging arranged as
//! a bottom-up binary tree) → `overseg` (normal-based graph segmentation and
//! ensembling). [`pipeline`] strings the stages together, [`io`] reads
//! ScanNet-style scene directories and writes PLY, and [`eval`] renders
//! synthetic scenes with ground truth and scores predictions.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod eval;
pub mod gridpool;
pub mod io;
pub mod lift;
pub mod merge;
pub mod overseg;
pub mod pipeline;
pub mod spatial;

pub use camera::{CameraIntrinsics, CameraPose, DepthFrame, PixelCoord, Point3, Projection};
pub use error::{Error, Result};
pub use eval::{MatchReport, SceneSpec};
pub use gridpool::{grid_pool, PoolConfig, VoxelKey};
pub use lift::{IdAllocator, IdBlock, LabeledCloud, MaskImage, RawMask, RawMaskSet};
pub use merge::{
    bidirectional_merge, bottom_up_merge, CorrespondenceSet, MergeConfig, MergeTreeTrace,
    OverlapStats, UnionFind,
};
pub use overseg::{NormalCloud, Oversegmentation, OversegConfig, SegGraph};
pub use pipeline::{OutputBundle, PipelineConfig, StopAfter};
