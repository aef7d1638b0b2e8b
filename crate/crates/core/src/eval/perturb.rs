use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::MaskImage;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbOptions {
    /// Probability that a mask is cut in two.
    pub split_prob: f64,
    pub permute_ids: bool,
}

impl PerturbOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.split_prob) {
            return Err(Error::validation("perturb.split_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.split_prob == 0.0 && !self.permute_ids
    }
}

/// Simulates mask granularity noise. Each mask (in ascending id order) is cut
/// with probability `split_prob` by a vertical or horizontal line; the part
/// past the line gets a fresh id above every existing one. Ids are then
/// optionally shuffled among themselves. Split parts inherit the parent's
/// confidence.
pub fn perturb_masks(gt: &MaskImage, opts: &PerturbOptions, seed: u64) -> Result<MaskImage> {
    opts.validate()?;
    gt.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gt.width as usize;
    let ids = gt.mask_ids();

    // Bounding extents per id: (min_u, max_u, min_v, max_v).
    let mut extent: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
    for (i, &l) in gt.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (u, v) = (i % w, i / w);
        let e = extent.entry(l).or_insert([u, u, v, v]);
        e[0] = e[0].min(u);
        e[1] = e[1].max(u);
        e[2] = e[2].min(v);
        e[3] = e[3].max(v);
    }

    let mut next_id = ids.last().copied().unwrap_or(0) + 1;
    let mut confidences = gt.confidences.clone();
    // id -> (axis, threshold, new id) for pixels with coordinate >= threshold.
    let mut cuts: BTreeMap<u32, (usize, usize, u32)> = BTreeMap::new();
    for &id in &ids {
        let draw: f64 = rng.random();
        if draw >= opts.split_prob {
            continue;
        }
        let e = extent[&id];
        let axes: Vec<usize> = [(0, e[0], e[1]), (1, e[2], e[3])]
            .iter()
            .filter(|(_, lo, hi)| hi > lo)
            .map(|(a, _, _)| *a)
            .collect();
        let Some(&axis) = axes.choose(&mut rng) else {
            continue;
        };
        let (lo, hi) = if axis == 0 { (e[0], e[1]) } else { (e[2], e[3]) };
        let threshold = rng.random_range(lo + 1..=hi);
        cuts.insert(id, (axis, threshold, next_id));
        if let Some(c) = gt.confidences.get(&id) {
            confidences.insert(next_id, *c);
        }
        next_id += 1;
    }

    let mut labels: Vec<u32> = gt
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match cuts.get(&l) {
            Some(&(axis, t, new)) => {
                let c = if axis == 0 { i % w } else { i / w };
                if c >= t {
                    new
                } else {
                    l
                }
            }
            None => l,
        })
        .collect();

    if opts.permute_ids {
        let mut out_ids: Vec<u32> = ids.iter().copied().chain(cuts.values().map(|c| c.2)).collect();
        out_ids.sort_unstable();
        let mut shuffled = out_ids.clone();
        shuffled.shuffle(&mut rng);
        let map: BTreeMap<u32, u32> = out_ids.into_iter().zip(shuffled).collect();
        for l in labels.iter_mut().filter(|l| **l != 0) {
            *l = map[l];
        }
        confidences = confidences
            .into_iter()
            .filter_map(|(id, c)| map.get(&id).map(|m| (*m, c)))
            .collect();
    }

    MaskImage::new(gt.width, gt.height, labels, confidences)
}
