use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use tracing::warn;

use super::image::{read_png_u16, read_png_u8};
use super::matrix::read_matrix4;
use crate::camera::{CameraIntrinsics, CameraPose, DepthFrame, DEFAULT_DEPTH_DIVISOR, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};
use crate::lift::{resolve_overlaps, MaskImage, RawMask, RawMaskSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub depth_divisor: f64,
    pub max_depth: f64,
    /// Keep every n-th frame (after sorting by id).
    pub frame_stride: usize,
    /// Fail on unparsable poses instead of skipping the frame.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            depth_divisor: DEFAULT_DEPTH_DIVISOR,
            max_depth: DEFAULT_MAX_DEPTH,
            frame_stride: 1,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Flattened 16-bit label image plus `{"id": confidence}` sidecar.
    Labels { image: PathBuf, confidences: PathBuf },
    /// Directory of 8-bit binary masks plus `scores.json` (one score per mask,
    /// in file-name order).
    Binary { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: u64,
    pub name: String,
    pub depth: PathBuf,
    pub pose_path: PathBuf,
    pub pose: CameraPose,
    pub mask: MaskSource,
}

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub intrinsics_path: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub depth_divisor: f64,
    pub max_depth: f64,
    /// Sorted by ascending id.
    pub frames: Vec<FrameRecord>,
    pub warnings: Vec<String>,
}

fn stems(dir: &Path, want_dirs: bool, ext: Option<&str>) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() != want_dirs {
            continue;
        }
        if let Some(ext) = ext {
            if path.extension().and_then(|e| e.to_str()) != Some(ext) {
                continue;
            }
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string());
        }
    }
    Ok(out)
}

/// Discovers and validates the frames of a scene directory.
pub fn load_scene(root: &Path, opts: &LoadOptions) -> Result<SceneDataset> {
    if !root.is_dir() {
        return Err(Error::Load(format!(
            "scene directory {} does not exist",
            root.display()
        )));
    }
    if opts.frame_stride == 0 {
        return Err(Error::Config("frame stride must be at least 1".into()));
    }
    let intrinsics_path = root.join("intrinsic.txt");
    if !intrinsics_path.is_file() {
        return Err(Error::Load(format!(
            "missing intrinsics file {}",
            intrinsics_path.display()
        )));
    }
    let intrinsics = CameraIntrinsics::from_matrix(&read_matrix4(&intrinsics_path)?)?;

    let depth_dir = root.join("depth");
    let pose_dir = root.join("pose");
    let mask_dir = root.join("masks");
    let depth = stems(&depth_dir, false, Some("png"))?;
    let poses = stems(&pose_dir, false, Some("txt"))?;
    let label_pngs = stems(&mask_dir, false, Some("png"))?;
    let sidecars = stems(&mask_dir, false, Some("json"))?;
    let mask_dirs = stems(&mask_dir, true, None)?;

    let mut warnings = Vec::new();
    let mut warn_skip = |msg: String| {
        warn!("{msg}");
        warnings.push(msg);
    };

    let all: BTreeSet<&String> = depth
        .iter()
        .chain(&poses)
        .chain(&label_pngs)
        .chain(&mask_dirs)
        .collect();
    let mut by_id: BTreeMap<u64, FrameRecord> = BTreeMap::new();
    for stem in all {
        let Ok(id) = stem.parse::<u64>() else {
            warn_skip(format!("skipping {stem:?}: frame name is not an integer"));
            continue;
        };
        let mut missing = Vec::new();
        if !depth.contains(stem) {
            missing.push(format!("depth/{stem}.png"));
        }
        if !poses.contains(stem) {
            missing.push(format!("pose/{stem}.txt"));
        }
        let mask = if label_pngs.contains(stem) && sidecars.contains(stem) {
            Some(MaskSource::Labels {
                image: mask_dir.join(format!("{stem}.png")),
                confidences: mask_dir.join(format!("{stem}.json")),
            })
        } else if mask_dirs.contains(stem) {
            Some(MaskSource::Binary {
                dir: mask_dir.join(stem),
            })
        } else {
            missing.push(if label_pngs.contains(stem) {
                format!("masks/{stem}.json")
            } else {
                format!("masks/{stem}.png")
            });
            None
        };
        if !missing.is_empty() {
            warn_skip(format!("skipping frame {stem}: missing {}", missing.join(", ")));
            continue;
        }
        let pose_path = pose_dir.join(format!("{stem}.txt"));
        let pose = match read_matrix4(&pose_path).and_then(|m| CameraPose::from_world_from_camera(&m)) {
            Ok(p) => p,
            Err(e) if opts.strict => return Err(e),
            Err(e) => {
                warn_skip(format!("skipping frame {stem}: {e}"));
                continue;
            }
        };
        if by_id.contains_key(&id) {
            warn_skip(format!("skipping {stem:?}: duplicate frame id {id}"));
            continue;
        }
        by_id.insert(
            id,
            FrameRecord {
                id,
                name: stem.clone(),
                depth: depth_dir.join(format!("{stem}.png")),
                pose_path,
                pose,
                mask: mask.expect("checked above"),
            },
        );
    }
    let frames: Vec<FrameRecord> = by_id
        .into_values()
        .step_by(opts.frame_stride)
        .collect();
    if frames.is_empty() {
        return Err(Error::Load(format!(
            "no usable frames in {}",
            root.display()
        )));
    }
    Ok(SceneDataset {
        root: root.to_path_buf(),
        intrinsics_path,
        intrinsics,
        depth_divisor: opts.depth_divisor,
        max_depth: opts.max_depth,
        frames,
        warnings,
    })
}

impl SceneDataset {
    pub fn load_depth(&self, frame: &FrameRecord) -> Result<DepthFrame> {
        let (w, h, depth) = read_png_u16(&frame.depth)?;
        let d = DepthFrame::new(w, h, depth)?
            .with_divisor(self.depth_divisor)
            .with_max_depth(self.max_depth);
        d.validate()?;
        Ok(d)
    }

    pub fn load_mask(&self, frame: &FrameRecord) -> Result<MaskImage> {
        match &frame.mask {
            MaskSource::Labels { image, confidences } => {
                let (w, h, labels) = read_png_u16(image)?;
                let text = fs::read_to_string(confidences).map_err(|e| Error::io(confidences, e))?;
                let raw: BTreeMap<String, f64> = serde_json::from_str(&text)?;
                let mut conf = BTreeMap::new();
                for (k, v) in raw {
                    let id: u32 = k.parse().map_err(|_| {
                        Error::MalformedInput(format!(
                            "{}: key {k:?} is not a mask id",
                            confidences.display()
                        ))
                    })?;
                    conf.insert(id, v);
                }
                let present: BTreeSet<u32> = labels.iter().map(|&l| l as u32).collect();
                conf.retain(|id, _| present.contains(id));
                MaskImage::new(w, h, labels.into_iter().map(u32::from).collect(), conf)
            }
            MaskSource::Binary { dir } => {
                let scores_path = dir.join("scores.json");
                let text = fs::read_to_string(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
                let scores: Vec<f64> = serde_json::from_str(&text)?;
                let mut files: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|e| Error::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
                    .collect();
                files.sort();
                if files.len() != scores.len() {
                    return Err(Error::MalformedInput(format!(
                        "{}: {} masks but {} scores",
                        dir.display(),
                        files.len(),
                        scores.len()
                    )));
                }
                let mut set = RawMaskSet {
                    width: 0,
                    height: 0,
                    masks: Vec::with_capacity(files.len()),
                };
                for (i, (path, &confidence)) in files.iter().zip(&scores).enumerate() {
                    let (w, h, px) = read_png_u8(path)?;
                    if i == 0 {
                        set.width = w;
                        set.height = h;
                    } else if (w, h) != (set.width, set.height) {
                        return Err(Error::MalformedInput(format!(
                            "{}: mask is {w}×{h}, expected {}×{}",
                            path.display(),
                            set.width,
                            set.height
                        )));
                    }
                    set.masks.push(RawMask {
                        pixels: px.into_iter().map(|v| v >= 128).collect(),
                        confidence,
                    });
                }
                resolve_overlaps(&set)
            }
        }
    }
}
