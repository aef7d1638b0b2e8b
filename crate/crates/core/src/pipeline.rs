//! End-to-end orchestration: lift → merge → over-segment → ensemble → export.
//!
//! Every stage writes artifacts that the next stage can be restarted from:
//!
//! | stage    | artifacts                                   |
//! |----------|---------------------------------------------|
//! | lift     | `frames/<frame>.ply`                        |
//! | merge    | `scene_sam.ply`, `merge_trace.json`         |
//! | overseg  | `overseg.txt`                               |
//! | ensemble | `scene.ply`                                 |
//!
//! `config.json` is written alongside in every case.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::camera::{DEFAULT_DEPTH_DIVISOR, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};
use crate::gridpool::{grid_pool, PoolConfig, DEFAULT_VOXEL_SIZE};
use crate::io::{self, load_scene, LoadOptions, SceneDataset};
use crate::lift::{lift_frame_in_block, IdAllocator, LabeledCloud};
use crate::merge::{bottom_up_merge, MergeConfig, MergeTreeTrace, DEFAULT_DELTA};
use crate::overseg::{ensemble, oversegment, Oversegmentation, OversegConfig};

pub const FRAMES_DIR: &str = "frames";
pub const SCENE_SAM_PLY: &str = "scene_sam.ply";
pub const SCENE_PLY: &str = "scene.ply";
pub const TRACE_JSON: &str = "merge_trace.json";
pub const OVERSEG_TXT: &str = "overseg.txt";
pub const CONFIG_JSON: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopAfter {
    Lift,
    Merge,
    Overseg,
}

impl FromStr for StopAfter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lift" => Ok(StopAfter::Lift),
            "merge" => Ok(StopAfter::Merge),
            "overseg" => Ok(StopAfter::Overseg),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected lift, merge or overseg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub delta: f64,
    /// Defaults to `delta`.
    pub ensemble_delta: Option<f64>,
    /// Defaults to `voxel_size`.
    pub match_radius: Option<f64>,
    /// Pixel stride when lifting.
    pub stride: u32,
    pub frame_stride: usize,
    pub knn: usize,
    pub fz_k: f64,
    pub min_segment: usize,
    pub no_ensemble: bool,
    pub no_pool_after_merge: bool,
    pub strict: bool,
    pub depth_divisor: f64,
    pub max_depth: f64,
    /// Worker threads; `None` uses every logical core. Not part of the
    /// snapshot since outputs do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    /// Recorded for reproducibility; every current stage is deterministic.
    pub seed: u64,
    pub stop_after: Option<StopAfter>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seg = OversegConfig::default();
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
            delta: DEFAULT_DELTA,
            ensemble_delta: None,
            match_radius: None,
            stride: 1,
            frame_stride: 1,
            knn: seg.knn,
            fz_k: seg.fz_k,
            min_segment: seg.min_segment,
            no_ensemble: false,
            no_pool_after_merge: false,
            strict: false,
            depth_divisor: DEFAULT_DEPTH_DIVISOR,
            max_depth: DEFAULT_MAX_DEPTH,
            threads: None,
            seed: 0,
            stop_after: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            voxel_size: self.voxel_size,
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            delta: self.delta,
            match_radius: self.match_radius.unwrap_or(self.voxel_size),
            pool_after_merge: !self.no_pool_after_merge,
            pool: self.pool_config(),
        }
    }

    pub fn overseg_config(&self) -> OversegConfig {
        OversegConfig {
            knn: self.knn,
            fz_k: self.fz_k,
            min_segment: self.min_segment,
        }
    }

    pub fn ensemble_delta(&self) -> f64 {
        self.ensemble_delta.unwrap_or(self.delta)
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            depth_divisor: self.depth_divisor,
            max_depth: self.max_depth,
            frame_stride: self.frame_stride,
            strict: self.strict,
        }
    }

    /// Checks every field against the range its stage accepts; errors name the field.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::validation(name, e.to_string());
        self.pool_config().validate().map_err(|e| field("voxel_size", e))?;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::validation("delta", format!("must lie in (0, 1], got {}", self.delta)));
        }
        let ed = self.ensemble_delta();
        if !(ed > 0.0 && ed <= 1.0) {
            return Err(Error::validation("ensemble_delta", format!("must lie in (0, 1], got {ed}")));
        }
        self.merge_config().validate().map_err(|e| field("match_radius", e))?;
        if self.stride == 0 {
            return Err(Error::validation("stride", "must be at least 1"));
        }
        if self.frame_stride == 0 {
            return Err(Error::validation("frame_stride", "must be at least 1"));
        }
        if self.knn < 3 {
            return Err(Error::validation("knn", "must be at least 3"));
        }
        if !(self.fz_k > 0.0 && self.fz_k.is_finite()) {
            return Err(Error::validation("fz_k", "must be positive"));
        }
        if self.min_segment == 0 {
            return Err(Error::validation("min_segment", "must be at least 1"));
        }
        if !(self.depth_divisor > 0.0 && self.depth_divisor.is_finite()) {
            return Err(Error::validation("depth_divisor", "must be positive"));
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::validation("max_depth", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::validation("threads", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone, Default)]
pub struct OutputBundle {
    pub frames: Vec<LabeledCloud>,
    /// Merged scene before ensembling.
    pub scene_sam: Option<LabeledCloud>,
    pub trace: Option<MergeTreeTrace>,
    pub overseg: Option<Oversegmentation>,
    /// Final labels (equal to `scene_sam` with ensembling off).
    pub scene: Option<LabeledCloud>,
    pub written: Vec<PathBuf>,
}

/// Runs `f` on a dedicated pool with `threads` workers (all cores if `None`).
pub fn with_thread_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Lifts every frame. Id blocks are reserved in frame order before the
/// parallel pass, so global ids do not depend on scheduling. Each frame is
/// grid-pooled.
pub fn lift_scene(ds: &SceneDataset, cfg: &PipelineConfig) -> Result<Vec<LabeledCloud>> {
    let pool = cfg.pool_config();
    let inputs = ds
        .frames
        .par_iter()
        .map(|f| Ok((ds.load_mask(f)?, ds.load_depth(f)?)))
        .collect::<Result<Vec<_>>>()?;
    let alloc = IdAllocator::new();
    let blocks: Vec<_> = inputs
        .iter()
        .map(|(mask, _)| alloc.reserve(mask.mask_ids().len() as u32))
        .collect();
    let clouds = ds
        .frames
        .par_iter()
        .zip(inputs.par_iter())
        .zip(blocks.par_iter())
        .map(|((f, (mask, depth)), block)| {
            let cloud = lift_frame_in_block(mask, depth, &ds.intrinsics, &f.pose, *block, cfg.stride)
                .map_err(|e| stage_error(&format!("lift frame {}", f.name), e))?;
            grid_pool(&cloud, &pool)
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        frames = clouds.len(),
        points = clouds.iter().map(LabeledCloud::len).sum::<usize>(),
        ids = alloc.peek_next() - 1,
        "lifted frames"
    );
    Ok(clouds)
}

pub fn merge_frames(frames: Vec<LabeledCloud>, cfg: &PipelineConfig) -> Result<(LabeledCloud, MergeTreeTrace)> {
    let k = frames.len();
    let (scene, trace) = bottom_up_merge(frames, &cfg.merge_config()).map_err(|e| stage_error("merge", e))?;
    info!(
        frames = k,
        levels = trace.level_count(),
        points = scene.len(),
        instances = scene.label_set().len(),
        "merged frames"
    );
    Ok((scene, trace))
}

pub fn oversegment_cloud(scene: &LabeledCloud, cfg: &PipelineConfig) -> Result<Oversegmentation> {
    let points: Vec<_> = scene.points.iter().map(|p| p.cast::<f64>()).collect();
    let seg = oversegment(&points, &cfg.overseg_config()).map_err(|e| stage_error("overseg", e))?;
    info!(segments = seg.segment_count(), "over-segmented scene");
    Ok(seg)
}

pub fn ensemble_cloud(scene: &LabeledCloud, seg: &Oversegmentation, cfg: &PipelineConfig) -> Result<LabeledCloud> {
    let out = ensemble(scene, seg, cfg.ensemble_delta()).map_err(|e| stage_error("ensemble", e))?;
    info!(instances = out.label_set().len(), "ensembled masks");
    Ok(out)
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        // Keep load and validation errors intact so their exit codes survive.
        Error::Load(_) | Error::Io { .. } | Error::Png { .. } | Error::Parse { .. } | Error::Validation { .. } => e,
        Error::MalformedInput(m) => Error::MalformedInput(format!("{stage}: {m}")),
        Error::Config(m) => Error::Config(format!("{stage}: {m}")),
        other => other,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `frames/<name>.ply` for each frame.
pub fn write_frames(out_dir: &Path, names: &[String], frames: &[LabeledCloud]) -> Result<Vec<PathBuf>> {
    let dir = out_dir.join(FRAMES_DIR);
    create_dir(&dir)?;
    names
        .par_iter()
        .zip(frames.par_iter())
        .map(|(name, cloud)| {
            let path = dir.join(format!("{name}.ply"));
            io::write_ply(cloud, &path)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.ply` in `dir` in frame order.
pub fn read_frames(dir: &Path) -> Result<Vec<LabeledCloud>> {
    if !dir.is_dir() {
        return Err(Error::Load(format!("frame directory {} not found", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("ply"))
        .collect();
    // Numeric stems sort numerically so unpadded frame names keep frame order.
    paths.sort_by_key(|p| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        (stem.parse::<u64>().ok(), stem)
    });
    if paths.is_empty() {
        return Err(Error::Load(format!("no .ply frames in {}", dir.display())));
    }
    paths.par_iter().map(|p| io::read_ply(p)).collect()
}

pub fn write_config(cfg: &PipelineConfig, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join(CONFIG_JSON);
    io::write_json(cfg, &path)?;
    Ok(path)
}

/// Merge stage from an in-memory frame list; writes the merged scene and trace.
pub fn run_from_frames(frames: Vec<LabeledCloud>, cfg: &PipelineConfig, out_dir: &Path) -> Result<OutputBundle> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let mut bundle = OutputBundle::default();
    let (scene, trace) = merge_frames(frames, cfg)?;
    let p = out_dir.join(SCENE_SAM_PLY);
    io::write_ply(&scene, &p)?;
    bundle.written.push(p);
    let p = out_dir.join(TRACE_JSON);
    io::write_json(&trace, &p)?;
    bundle.written.push(p);
    bundle.trace = Some(trace);
    if cfg.stop_after == Some(StopAfter::Merge) {
        bundle.scene_sam = Some(scene);
        bundle.written.push(write_config(cfg, out_dir)?);
        return Ok(bundle);
    }
    let rest = run_from_scene(scene, None, cfg, out_dir)?;
    bundle.written.extend(rest.written);
    bundle.scene_sam = rest.scene_sam;
    bundle.overseg = rest.overseg;
    bundle.scene = rest.scene;
    Ok(bundle)
}

/// Over-segmentation and ensembling from a merged scene. A precomputed
/// segmentation skips the over-segmentation stage.
pub fn run_from_scene(
    scene: LabeledCloud,
    seg: Option<Oversegmentation>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<OutputBundle> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let mut bundle = OutputBundle::default();
    let final_scene = if cfg.no_ensemble {
        scene.clone()
    } else {
        let seg = match seg {
            Some(s) => s,
            None => {
                let s = oversegment_cloud(&scene, cfg)?;
                let p = out_dir.join(OVERSEG_TXT);
                io::write_segments(&s, &p)?;
                bundle.written.push(p);
                s
            }
        };
        if cfg.stop_after == Some(StopAfter::Overseg) {
            bundle.overseg = Some(seg);
            bundle.scene_sam = Some(scene);
            bundle.written.push(write_config(cfg, out_dir)?);
            return Ok(bundle);
        }
        let out = ensemble_cloud(&scene, &seg, cfg)?;
        bundle.overseg = Some(seg);
        out
    };
    let p = out_dir.join(SCENE_PLY);
    io::write_ply(&final_scene, &p)?;
    bundle.written.push(p);
    bundle.written.push(write_config(cfg, out_dir)?);
    bundle.scene_sam = Some(scene);
    bundle.scene = Some(final_scene);
    Ok(bundle)
}

/// Full pipeline from a scene directory. The scene is loaded and validated
/// before anything is written, so a failed load leaves no output behind.
pub fn run(scene_root: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<OutputBundle> {
    cfg.validate()?;
    let ds = load_scene(scene_root, &cfg.load_options())?;
    for w in &ds.warnings {
        warn!("{w}");
    }
    info!(frames = ds.frames.len(), root = %scene_root.display(), "loaded scene");
    let frames = lift_scene(&ds, cfg)?;
    create_dir(out_dir)?;
    if cfg.stop_after == Some(StopAfter::Lift) {
        let names: Vec<String> = ds.frames.iter().map(|f| f.name.clone()).collect();
        let mut written = write_frames(out_dir, &names, &frames)?;
        written.push(write_config(cfg, out_dir)?);
        return Ok(OutputBundle {
            frames,
            written,
            ..OutputBundle::default()
        });
    }
    run_from_frames(frames, cfg, out_dir)
}
