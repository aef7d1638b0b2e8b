//! Single-frame lifting: flatten overlapping 2D masks into one label image,
//! then back-project the labeled pixels into a world-space [`LabeledCloud`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};

use nalgebra::Vector3;

use crate::camera::{unproject_frame, CameraIntrinsics, CameraPose, DepthFrame};
use crate::error::{Error, Result};

/// Stored point type: clouds keep single-precision coordinates, matching the
/// on-disk PLY representation exactly.
pub type CloudPoint = nalgebra::Point3<f32>;

/// Per-pixel frame-local mask labels (0 = unlabeled) with a confidence per mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub confidences: BTreeMap<u32, f64>,
}

impl MaskImage {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u32>,
        confidences: BTreeMap<u32, f64>,
    ) -> Result<Self> {
        let img = Self {
            width,
            height,
            labels,
            confidences,
        };
        img.validate()?;
        Ok(img)
    }

    /// Label image where every mask gets confidence 1.
    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        let confidences = labels
            .iter()
            .filter(|&&l| l != 0)
            .map(|&l| (l, 1.0))
            .collect();
        Self::new(width, height, labels, confidences)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize;
        if self.labels.len() != expected {
            return Err(Error::MalformedInput(format!(
                "mask has {} labels, expected {expected}",
                self.labels.len()
            )));
        }
        if self.confidences.contains_key(&0) {
            return Err(Error::MalformedInput(
                "label 0 must not carry a confidence".into(),
            ));
        }
        if let Some(l) = self
            .labels
            .iter()
            .find(|&&l| l != 0 && !self.confidences.contains_key(&l))
        {
            return Err(Error::MalformedInput(format!(
                "mask id {l} has no confidence entry"
            )));
        }
        Ok(())
    }

    /// Distinct nonzero labels present in the image, ascending.
    pub fn mask_ids(&self) -> Vec<u32> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// One binary mask (row-major membership) and its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMask {
    pub pixels: Vec<bool>,
    pub confidence: f64,
}

/// Possibly-overlapping binary masks for one frame. Mask `i` (0-based) has
/// frame-local id `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMaskSet {
    pub width: u32,
    pub height: u32,
    pub masks: Vec<RawMask>,
}

/// Flattens overlapping masks: every pixel takes the covering mask with the
/// highest confidence, ties going to the smaller id.
pub fn resolve_overlaps(raw: &RawMaskSet) -> Result<MaskImage> {
    let n = raw.width as usize * raw.height as usize;
    let mut labels = vec![0u32; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    for (i, mask) in raw.masks.iter().enumerate() {
        if mask.pixels.len() != n {
            return Err(Error::MalformedInput(format!(
                "mask {} has {} pixels, expected {n}",
                i + 1,
                mask.pixels.len()
            )));
        }
        if !(0.0..=1.0).contains(&mask.confidence) {
            return Err(Error::MalformedInput(format!(
                "mask {} confidence {} outside [0, 1]",
                i + 1,
                mask.confidence
            )));
        }
        let id = i as u32 + 1;
        for (px, &on) in mask.pixels.iter().enumerate() {
            // Strict comparison keeps the earlier (smaller) id on ties.
            if on && mask.confidence > best[px] {
                best[px] = mask.confidence;
                labels[px] = id;
            }
        }
    }
    let present: BTreeSet<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
    let confidences = present
        .into_iter()
        .map(|id| (id, raw.masks[id as usize - 1].confidence))
        .collect();
    MaskImage::new(raw.width, raw.height, labels, confidences)
}

/// 3D points with a global instance label per point (0 = unlabeled).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub points: Vec<CloudPoint>,
    pub labels: Vec<u32>,
}

impl LabeledCloud {
    pub fn new(points: Vec<CloudPoint>, labels: Vec<u32>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::MalformedInput(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct nonzero labels.
    pub fn label_set(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Coordinates widened to `f64` for geometric work.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.coords.cast::<f64>()).collect()
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &LabeledCloud) -> LabeledCloud {
        let mut points = Vec::with_capacity(self.len() + other.len());
        points.extend_from_slice(&self.points);
        points.extend_from_slice(&other.points);
        let mut labels = Vec::with_capacity(points.len());
        labels.extend_from_slice(&self.labels);
        labels.extend_from_slice(&other.labels);
        LabeledCloud { points, labels }
    }
}

/// A contiguous range of global ids reserved for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdBlock {
    pub start: u32,
    pub len: u32,
}

/// Issues globally unique, strictly increasing, nonzero mask ids. Safe to
/// share between threads; each frame reserves one contiguous block.
#[derive(Debug)]
pub struct IdAllocator {
    next: AtomicU32,
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self::new()
    }
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::starting_at(1)
    }

    pub fn starting_at(first: u32) -> Self {
        Self {
            next: AtomicU32::new(first.max(1)),
        }
    }

    pub fn reserve(&self, len: u32) -> IdBlock {
        let start = self.next.fetch_add(len, Ordering::Relaxed);
        assert!(
            start.checked_add(len).is_some(),
            "mask id space exhausted"
        );
        IdBlock { start, len }
    }

    pub fn peek_next(&self) -> u32 {
        self.next.load(Ordering::Relaxed)
    }
}

/// Lifts a frame's masks, drawing fresh global ids from `alloc`.
pub fn lift_frame(
    mask: &MaskImage,
    frame: &DepthFrame,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    alloc: &IdAllocator,
    stride: u32,
) -> Result<LabeledCloud> {
    check_dims(mask, frame)?;
    let block = alloc.reserve(mask.mask_ids().len() as u32);
    lift_frame_in_block(mask, frame, intr, pose, block, stride)
}

/// Lifts a frame's masks into a pre-reserved id block. Frame-local ids map to
/// `block.start + rank` in ascending local-id order; label 0 stays 0.
pub fn lift_frame_in_block(
    mask: &MaskImage,
    frame: &DepthFrame,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    block: IdBlock,
    stride: u32,
) -> Result<LabeledCloud> {
    check_dims(mask, frame)?;
    mask.validate()?;
    let ids = mask.mask_ids();
    if ids.len() as u32 > block.len {
        return Err(Error::MalformedInput(format!(
            "frame has {} masks but the id block holds {}",
            ids.len(),
            block.len
        )));
    }
    let global: BTreeMap<u32, u32> = ids
        .iter()
        .enumerate()
        .map(|(rank, &local)| (local, block.start + rank as u32))
        .collect();

    let pixels = unproject_frame(frame, intr, pose, stride)?;
    let mut points = Vec::with_capacity(pixels.len());
    let mut labels = Vec::with_capacity(pixels.len());
    for (pix, p) in pixels {
        let local = mask.labels[pix.v as usize * mask.width as usize + pix.u as usize];
        points.push(p.cast::<f32>());
        labels.push(if local == 0 { 0 } else { global[&local] });
    }
    Ok(LabeledCloud { points, labels })
}

fn check_dims(mask: &MaskImage, frame: &DepthFrame) -> Result<()> {
    if mask.width != frame.width || mask.height != frame.height {
        return Err(Error::MalformedInput(format!(
            "mask is {}×{} but depth frame is {}×{}",
            mask.width, mask.height, frame.width, frame.height
        )));
    }
    Ok(())
}
