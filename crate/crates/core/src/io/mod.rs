//! Scene ingestion and artifact output.
//!
//! Scenes follow a ScanNet-style export layout:
//!
//! ```text
//! root/
//!   intrinsic.txt          4×4 calibration matrix
//!   depth/000000.png       16-bit depth, raw units
//!   pose/000000.txt        4×4 world-from-camera matrix
//!   masks/000000.png       16-bit frame-local mask ids (0 = unlabeled)
//!   masks/000000.json      {"<id>": confidence, ...}
//! ```
//!
//! A frame may instead supply `masks/000000/` holding 8-bit binary mask PNGs
//! (255 = member) and a `scores.json` list; overlaps are then resolved by
//! confidence.

mod dataset;
mod image;
mod matrix;
mod ply;

pub use dataset::{load_scene, FrameRecord, LoadOptions, MaskSource, SceneDataset};
pub use image::{read_png_u16, read_png_u8, write_png_u16, write_png_u8};
pub use matrix::{read_matrix4, write_matrix4};
pub use ply::{label_color, read_ply, write_ply};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::overseg::Oversegmentation;

/// One segment id per line, aligned with the scene PLY vertex order.
pub fn write_segments(seg: &Oversegmentation, path: &Path) -> Result<()> {
    let mut text = String::with_capacity(seg.segment_id.len() * 4);
    for id in &seg.segment_id {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_segments(path: &Path) -> Result<Oversegmentation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let segment_id = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad segment id {l:?}: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Oversegmentation { segment_id })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
