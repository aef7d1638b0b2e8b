use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::scene::SceneSpec;
use crate::camera::{CameraPose, DepthFrame};
use crate::error::{Error, Result};
use crate::lift::MaskImage;

/// Depth and ground-truth masks for one camera of a [`SceneSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub pose: CameraPose,
    pub depth: DepthFrame,
    /// Frame-local ground-truth mask ids, 1.. in ascending instance order.
    pub mask: MaskImage,
    pub instance_of_local: BTreeMap<u32, u32>,
    /// True instance id per pixel (0 where the ray misses or depth is invalid).
    pub instances: Vec<u32>,
}

/// Ray-casts every pixel against every primitive; the nearest hit wins.
/// Depth is the camera-frame z of the hit, rounded to raw units.
pub fn render_depth(spec: &SceneSpec, pose_index: usize) -> Result<RenderedView> {
    let cam = spec.cameras.get(pose_index).ok_or_else(|| {
        Error::validation(
            "cameras",
            format!("pose index {pose_index} out of range ({} poses)", spec.cameras.len()),
        )
    })?;
    let pose = cam.pose()?;
    let r_wc = pose.rotation().transpose();
    let origin = pose.center().coords;
    let intr = spec.intrinsics;
    let (w, h) = (spec.width as usize, spec.height as usize);

    let rows: Vec<Vec<(u16, u32)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let dir_cam = Vector3::new(
                        (u as f64 - intr.cx) / intr.fx,
                        (v as f64 - intr.cy) / intr.fy,
                        1.0,
                    );
                    let dir = r_wc * dir_cam;
                    let mut best: Option<(f64, u32)> = None;
                    for prim in &spec.primitives {
                        if let Some(t) = prim.intersect(&origin, &dir) {
                            if best.is_none_or(|(bt, _)| t < bt) {
                                best = Some((t, prim.instance()));
                            }
                        }
                    }
                    match best {
                        // With dir_cam.z = 1 the ray parameter is camera-frame z.
                        Some((t, inst)) => {
                            let raw = (t * spec.depth_divisor).round();
                            if raw >= 1.0 && raw <= u16::MAX as f64 {
                                (raw as u16, inst)
                            } else {
                                (0, 0)
                            }
                        }
                        None => (0, 0),
                    }
                })
                .collect()
        })
        .collect();

    let (depth, instances): (Vec<u16>, Vec<u32>) = rows.into_iter().flatten().unzip();
    let mut present: Vec<u32> = instances.iter().copied().filter(|&i| i != 0).collect();
    present.sort_unstable();
    present.dedup();
    let local_of: BTreeMap<u32, u32> = present
        .iter()
        .enumerate()
        .map(|(k, &inst)| (inst, k as u32 + 1))
        .collect();
    let labels: Vec<u32> = instances
        .iter()
        .map(|i| if *i == 0 { 0 } else { local_of[i] })
        .collect();
    let mask = MaskImage::from_labels(spec.width, spec.height, labels)?;
    let depth = DepthFrame::new(spec.width, spec.height, depth)?.with_divisor(spec.depth_divisor);
    Ok(RenderedView {
        pose,
        depth,
        mask,
        instance_of_local: local_of.into_iter().map(|(inst, local)| (local, inst)).collect(),
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{unproject_pixel, CameraIntrinsics, PixelCoord};
    use crate::eval::scene::{CameraSpec, Primitive};

    fn facing_z(primitives: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            width: 3,
            height: 3,
            intrinsics: CameraIntrinsics::new(2.0, 2.0, 1.0, 1.0).unwrap(),
            primitives,
            cameras: vec![CameraSpec {
                eye: [0.0, 0.0, -2.0],
                target: [0.0, 0.0, 0.0],
                up: [0.0, -1.0, 0.0],
            }],
            ..SceneSpec::default()
        }
    }

    fn unit_box(instance: u32, center: [f64; 3]) -> Primitive {
        Primitive::Box {
            instance,
            min: center.map(|c| c - 0.5),
            max: center.map(|c| c + 0.5),
        }
    }

    #[test]
    fn center_pixel_hits_front_face() {
        let view = render_depth(&facing_z(vec![unit_box(4, [0.0; 3])]), 0).unwrap();
        assert_eq!(view.depth.depth[4], 1500);
        assert_eq!(view.mask.labels[4], 1);
        assert_eq!(view.instance_of_local[&1], 4);
    }

    #[test]
    fn misses_are_empty() {
        let view = render_depth(&facing_z(vec![unit_box(4, [20.0, 0.0, 0.0])]), 0).unwrap();
        assert!(view.depth.depth.iter().all(|&d| d == 0));
        assert!(view.mask.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn nearer_box_wins() {
        let spec = facing_z(vec![unit_box(9, [0.0, 0.0, 3.0]), unit_box(2, [0.0, 0.0, 0.0])]);
        let view = render_depth(&spec, 0).unwrap();
        assert_eq!(view.instances[4], 2);
        assert_eq!(view.depth.depth[4], 1500);
    }

    #[test]
    fn bad_pose_index() {
        assert!(render_depth(&facing_z(vec![unit_box(1, [0.0; 3])]), 3).is_err());
    }

    #[test]
    fn unprojected_depth_lies_on_surfaces() {
        let mut spec = SceneSpec::eight_boxes(4);
        spec.primitives.push(Primitive::Plane {
            instance: 50,
            origin: [-3.0, -3.0, -0.01],
            edge_u: [6.0, 0.0, 0.0],
            edge_v: [0.0, 6.0, 0.0],
        });
        for idx in 0..spec.cameras.len() {
            let view = render_depth(&spec, idx).unwrap();
            for v in 0..spec.height {
                for u in 0..spec.width {
                    let i = (v * spec.width + u) as usize;
                    let raw = view.depth.depth[i];
                    if raw == 0 {
                        continue;
                    }
                    let pix = PixelCoord::new(u, v);
                    let d = raw as f64 / spec.depth_divisor;
                    let p = unproject_pixel(pix, d, &spec.intrinsics, &view.pose).unwrap();
                    let ray_scale = Vector3::new(
                        (u as f64 - spec.intrinsics.cx) / spec.intrinsics.fx,
                        (v as f64 - spec.intrinsics.cy) / spec.intrinsics.fy,
                        1.0,
                    )
                    .norm();
                    let prim = spec
                        .primitives
                        .iter()
                        .find(|p| p.instance() == view.instances[i])
                        .unwrap();
                    let err = prim.surface_distance(&p.coords);
                    let bound = 0.5 / spec.depth_divisor * ray_scale + 1e-6;
                    assert!(err <= bound, "pixel ({u},{v}) off surface by {err:e} > {bound:e}");
                }
            }
        }
    }
}
