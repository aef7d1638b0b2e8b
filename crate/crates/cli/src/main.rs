use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::info;

use masklift_core::eval::{evaluate_clouds, write_synthetic_scene, SceneSpec};
use masklift_core::io::{read_ply, read_segments, write_json};
use masklift_core::pipeline::{self, read_frames, run_from_frames, run_from_scene, with_thread_pool};
use masklift_core::{Error, PipelineConfig, StopAfter};

/// Coordinates of a prediction and its ground truth must agree this closely.
const ALIGN_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "masklift", version, about = "Fuse per-frame 2D instance masks into 3D scene instances")]
struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true, env = "MASKLIFT_THREADS")]
    threads: Option<usize>,
    /// Emit logs as JSON lines.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full pipeline on a scene directory.
    Run {
        scene: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineArgs,
    },
    /// Lift every frame and write `frames/*.ply`.
    Lift {
        scene: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineArgs,
    },
    /// Merge lifted frame clouds (a `frames/` directory) and continue from there.
    Merge {
        frames: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineArgs,
    },
    /// Over-segment a merged scene cloud into `overseg.txt`.
    Overseg {
        scene_ply: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineArgs,
    },
    /// Combine a merged scene with its over-segmentation into `scene.ply`.
    Ensemble {
        scene_ply: PathBuf,
        overseg: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        opts: PipelineArgs,
    },
    /// Score a predicted PLY against a ground-truth PLY over the same points.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Report path (default: eval.json next to the prediction).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a synthetic scene directory with ground truth.
    Synth {
        out: PathBuf,
        /// Scene description (default: eight boxes seen from 16 poses).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-mask split probability.
        #[arg(long)]
        split_prob: Option<f64>,
        /// Shuffle frame-local mask ids.
        #[arg(long)]
        permute_ids: bool,
    },
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Voxel edge length in meters.
    #[arg(long)]
    voxel: Option<f64>,
    /// Overlap threshold for frame merging.
    #[arg(long)]
    delta: Option<f64>,
    /// Overlap threshold for ensembling (default: --delta).
    #[arg(long)]
    ensemble_delta: Option<f64>,
    /// Correspondence radius in meters (default: --voxel).
    #[arg(long)]
    match_radius: Option<f64>,
    /// Pixel stride when lifting.
    #[arg(long)]
    stride: Option<u32>,
    /// Use every n-th frame.
    #[arg(long)]
    frame_stride: Option<usize>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    fz_k: Option<f64>,
    #[arg(long)]
    min_segment: Option<usize>,
    #[arg(long)]
    depth_divisor: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
    #[arg(long)]
    no_ensemble: bool,
    #[arg(long)]
    no_pool_after_merge: bool,
    /// Treat unreadable pose files as fatal.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["lift", "merge", "overseg"])]
    stop_after: Option<String>,
}

impl PipelineArgs {
    fn resolve(&self, threads: Option<usize>) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(voxel => voxel_size, delta => delta, stride => stride, frame_stride => frame_stride,
             knn => knn, fz_k => fz_k, min_segment => min_segment, depth_divisor => depth_divisor,
             max_depth => max_depth, seed => seed);
        if self.ensemble_delta.is_some() {
            cfg.ensemble_delta = self.ensemble_delta;
        }
        if self.match_radius.is_some() {
            cfg.match_radius = self.match_radius;
        }
        cfg.no_ensemble |= self.no_ensemble;
        cfg.no_pool_after_merge |= self.no_pool_after_merge;
        cfg.strict |= self.strict;
        if let Some(s) = &self.stop_after {
            cfg.stop_after = Some(s.parse::<StopAfter>()?);
        }
        cfg.threads = threads.or(cfg.threads);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_load_error() {
        2
    } else if matches!(e, Error::Validation { .. } | Error::Config(_) | Error::Alignment(_)) {
        3
    } else {
        1
    }
}

fn init_logging(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stdout)
        .with_ansi(std::io::stdout().is_terminal())
        .with_target(false);
    if json {
        builder.json().init();
    } else {
        builder.without_time().init();
    }
}

fn summarize(written: &[PathBuf]) {
    for p in written {
        info!("wrote {}", p.display());
    }
}

fn load_cloud(path: &Path) -> Result<masklift_core::LabeledCloud, Error> {
    if !path.is_file() {
        return Err(Error::Load(format!("{} not found", path.display())));
    }
    read_ply(path)
}

fn execute(command: Command, threads: Option<usize>) -> Result<(), Error> {
    match command {
        Command::Run { scene, out, opts } => {
            let cfg = opts.resolve(threads)?;
            summarize(&pipeline::run(&scene, &cfg, &out)?.written);
        }
        Command::Lift { scene, out, opts } => {
            let mut cfg = opts.resolve(threads)?;
            cfg.stop_after = Some(StopAfter::Lift);
            summarize(&pipeline::run(&scene, &cfg, &out)?.written);
        }
        Command::Merge { frames, out, opts } => {
            let cfg = opts.resolve(threads)?;
            let clouds = read_frames(&frames)?;
            summarize(&run_from_frames(clouds, &cfg, &out)?.written);
        }
        Command::Overseg { scene_ply, out, opts } => {
            let mut cfg = opts.resolve(threads)?;
            cfg.no_ensemble = false;
            cfg.stop_after = Some(StopAfter::Overseg);
            let scene = load_cloud(&scene_ply)?;
            summarize(&run_from_scene(scene, None, &cfg, &out)?.written);
        }
        Command::Ensemble {
            scene_ply,
            overseg,
            out,
            opts,
        } => {
            let mut cfg = opts.resolve(threads)?;
            cfg.no_ensemble = false;
            cfg.stop_after = None;
            let scene = load_cloud(&scene_ply)?;
            if !overseg.is_file() {
                return Err(Error::Load(format!("{} not found", overseg.display())));
            }
            let seg = read_segments(&overseg)?;
            summarize(&run_from_scene(scene, Some(seg), &cfg, &out)?.written);
        }
        Command::Eval { pred, gt, report } => {
            let p = load_cloud(&pred)?;
            let g = load_cloud(&gt)?;
            let r = evaluate_clouds(&p, &g, ALIGN_TOLERANCE)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            let path = report.unwrap_or_else(|| pred.with_file_name("eval.json"));
            write_json(&r, &path)?;
            info!(
                mean_iou = r.mean_iou,
                predicted = r.pred_count,
                truth = r.gt_count,
                "wrote {}",
                path.display()
            );
        }
        Command::Synth {
            out,
            spec,
            seed,
            split_prob,
            permute_ids,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Load(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<SceneSpec>(&text)
                        .map_err(|e| Error::Validation {
                            path: p.display().to_string(),
                            msg: e.to_string(),
                        })?
                }
                None => SceneSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(p) = split_prob {
                s.perturb.split_prob = p;
            }
            s.perturb.permute_ids |= permute_ids;
            write_synthetic_scene(&s, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.json_logs);
    let threads = cli.threads;
    if threads == Some(0) {
        eprintln!("error: threads: must be at least 1");
        return ExitCode::from(3);
    }
    let result = with_thread_pool(threads, move || execute(cli.command, threads)).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
