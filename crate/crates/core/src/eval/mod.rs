//! Synthetic scenes with exact ground truth, and instance-matching metrics.
//!
//! Scenes are built from axis-aligned boxes and finite planar rectangles so
//! that every rendered depth value comes from an analytic ray intersection.

mod metrics;
mod perturb;
mod render;
mod scene;
mod synth;

pub use metrics::{evaluate_clouds, hungarian_match_iou, max_weight_assignment, InstanceMatch, MatchReport};
pub use perturb::{perturb_masks, PerturbOptions};
pub use render::{render_depth, RenderedView};
pub use scene::{CameraSpec, Primitive, ReferenceGeometry, SceneSpec};
pub use synth::{ground_truth_cloud, write_synthetic_scene, SynthSummary};
