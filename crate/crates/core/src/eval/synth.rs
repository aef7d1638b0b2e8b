use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::perturb::perturb_masks;
use super::render::{render_depth, RenderedView};
use super::scene::SceneSpec;
use crate::camera::unproject_frame;
use crate::error::{Error, Result};
use crate::gridpool::{grid_pool, PoolConfig};
use crate::io::{write_json, write_matrix4, write_ply, write_png_u16};
use crate::lift::LabeledCloud;
use crate::merge::tree_reduce;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub frames: usize,
    pub instances: usize,
    pub gt_points: usize,
}

/// Per-frame perturbation seed; distinct frames get decorrelated streams.
pub(crate) fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn frame_cloud(spec: &SceneSpec, view: &RenderedView) -> Result<LabeledCloud> {
    let pixels = unproject_frame(&view.depth, &spec.intrinsics, &view.pose, spec.reference.stride)?;
    let w = spec.width as usize;
    let (points, labels) = pixels
        .into_iter()
        .map(|(pix, p)| (p.cast::<f32>(), view.instances[pix.v as usize * w + pix.u as usize]))
        .unzip();
    LabeledCloud::new(points, labels)
}

/// Ground-truth scene cloud. The geometry follows the pipeline exactly (per-frame
/// pooling, then a bottom-up tree of concatenate-and-pool), so its points line
/// up one-to-one with a pipeline run using the reference voxel size and stride.
/// Labels are true instance ids.
pub fn ground_truth_cloud(spec: &SceneSpec) -> Result<LabeledCloud> {
    spec.validate()?;
    let pool = PoolConfig::new(spec.reference.voxel_size)?;
    let pool_after = spec.reference.pool_after_merge;
    let clouds = (0..spec.cameras.len())
        .into_par_iter()
        .map(|i| {
            let view = render_depth(spec, i)?;
            grid_pool(&frame_cloud(spec, &view)?, &pool)
        })
        .collect::<Result<Vec<_>>>()?;
    let (cloud, _) = tree_reduce(
        clouds,
        |a, b| {
            let joined = a.concat(b);
            let out = if pool_after { grid_pool(&joined, &pool)? } else { joined };
            Ok((out, 0))
        },
        LabeledCloud::len,
    )?;
    if spec.cameras.len() == 1 && pool_after {
        return grid_pool(&cloud, &pool);
    }
    Ok(cloud)
}

/// Writes a scene directory in the io module's layout, plus `spec.json` and the
/// ground-truth `gt.ply`.
pub fn write_synthetic_scene(spec: &SceneSpec, out_dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    for sub in ["depth", "pose", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    write_matrix4(&spec.intrinsics.matrix4(), &out_dir.join("intrinsic.txt"))?;

    (0..spec.cameras.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let view = render_depth(spec, i)?;
        let mask = if spec.perturb.is_identity() {
            view.mask
        } else {
            perturb_masks(&view.mask, &spec.perturb, frame_seed(spec.seed, i))?
        };
        let stem = format!("{i:06}");
        write_png_u16(
            &out_dir.join(format!("depth/{stem}.png")),
            spec.width,
            spec.height,
            &view.depth.depth,
        )?;
        write_matrix4(
            &spec.cameras[i].world_from_camera()?,
            &out_dir.join(format!("pose/{stem}.txt")),
        )?;
        let labels = mask
            .labels
            .iter()
            .map(|&l| {
                u16::try_from(l).map_err(|_| Error::MalformedInput(format!("mask id {l} exceeds 16 bits")))
            })
            .collect::<Result<Vec<u16>>>()?;
        write_png_u16(
            &out_dir.join(format!("masks/{stem}.png")),
            spec.width,
            spec.height,
            &labels,
        )?;
        let conf: BTreeMap<String, f64> = mask
            .confidences
            .iter()
            .map(|(id, c)| (id.to_string(), *c))
            .collect();
        write_json(&conf, &out_dir.join(format!("masks/{stem}.json")))
    })?;

    write_json(spec, &out_dir.join("spec.json"))?;
    let gt = ground_truth_cloud(spec)?;
    write_ply(&gt, &out_dir.join("gt.ply"))?;
    let summary = SynthSummary {
        frames: spec.cameras.len(),
        instances: gt.label_set().len(),
        gt_points: gt.len(),
    };
    info!(
        frames = summary.frames,
        instances = summary.instances,
        points = summary.gt_points,
        "synthetic scene written to {}",
        out_dir.display()
    );
    Ok(summary)
}
