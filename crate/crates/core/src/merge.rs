//! Bidirectional merging of two labeled clouds and the bottom-up merge tree
//! that folds all frames into one scene cloud.
//!
//! For clouds `X¹`, `X²` and a correspondence set `M ⊂ X¹ × X²`, let `σ¹ₘ` be
//! the number of `X¹` points labeled `m`, `σ²ₙ` the number of `X²` points
//! labeled `n`, and `σ¹²ₘₙ` the number of pairs in `M` whose ends carry `m`
//! and `n`. Masks `m` and `n` are unified when
//!
//! ```text
//! σ¹²ₘₙ > δ · min(σ¹ₘ, σ²ₙ)
//! ```
//!
//! The test runs once with correspondences from `X¹` into `X²` and once with
//! correspondences from `X²` into `X¹`. All decisions from both passes are
//! collected first and applied through a union-find whose representative is
//! the smallest id of each class, so the outcome does not depend on the order
//! decisions are visited in. Label 0 (unlabeled) never takes part.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridpool::{grid_pool, PoolConfig};
use crate::lift::LabeledCloud;
use crate::spatial::HashGrid;

pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct MergeConfig {
    /// Overlap threshold δ in (0, 1].
    pub delta: f64,
    /// Correspondence search radius in meters.
    pub match_radius: f64,
    pub pool_after_merge: bool,
    pub pool: PoolConfig,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self::with_voxel(PoolConfig::default().voxel_size)
    }
}

impl MergeConfig {
    /// Defaults with the match radius tied to the voxel size.
    pub fn with_voxel(voxel_size: f64) -> Self {
        Self {
            delta: DEFAULT_DELTA,
            match_radius: voxel_size,
            pool_after_merge: true,
            pool: PoolConfig { voxel_size },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if !(self.match_radius > 0.0 && self.match_radius.is_finite()) {
            return Err(Error::Config(format!(
                "match radius must be positive, got {}",
                self.match_radius
            )));
        }
        self.pool.validate()
    }
}

/// Matched point pairs `(i in X¹, j in X²)`; each `i` appears at most once.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    /// `(i, i)` for every point; used when both sides share one point array.
    pub fn identity(n: usize) -> Self {
        Self {
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// For every point of `x1`, its nearest `x2` point within `radius` (ties to
/// the smaller index), if any.
pub fn find_correspondences(
    x1: &LabeledCloud,
    x2: &LabeledCloud,
    radius: f64,
) -> CorrespondenceSet {
    assert!(radius > 0.0, "match radius must be positive");
    if x1.is_empty() || x2.is_empty() {
        return CorrespondenceSet::default();
    }
    let p1 = x1.positions();
    let p2 = x2.positions();
    let grid = HashGrid::new(&p2, radius);
    let pairs = p1
        .par_iter()
        .enumerate()
        .filter_map(|(i, q)| grid.nearest_within(q, radius).map(|j| (i, j)))
        .collect();
    CorrespondenceSet { pairs }
}

/// Mask histograms of both clouds and the cross-mask pair counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlapStats {
    pub count1: BTreeMap<u32, usize>,
    pub count2: BTreeMap<u32, usize>,
    pub cross: BTreeMap<(u32, u32), usize>,
}

fn histogram(labels: &[u32]) -> BTreeMap<u32, usize> {
    let mut h: HashMap<u32, usize> = HashMap::new();
    for &l in labels.iter().filter(|&&l| l != 0) {
        *h.entry(l).or_default() += 1;
    }
    h.into_iter().collect()
}

pub fn overlap_stats(
    x1: &LabeledCloud,
    x2: &LabeledCloud,
    corr: &CorrespondenceSet,
) -> Result<OverlapStats> {
    let mut seen = vec![false; x1.len()];
    let mut cross: HashMap<(u32, u32), usize> = HashMap::new();
    for &(i, j) in &corr.pairs {
        if i >= x1.len() || j >= x2.len() {
            return Err(Error::MalformedCorrespondence(format!(
                "pair ({i}, {j}) out of range for clouds of {} and {} points",
                x1.len(),
                x2.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::MalformedCorrespondence(format!(
                "point {i} is matched more than once"
            )));
        }
        let (m, n) = (x1.labels[i], x2.labels[j]);
        if m != 0 && n != 0 {
            *cross.entry((m, n)).or_default() += 1;
        }
    }
    Ok(OverlapStats {
        count1: histogram(&x1.labels),
        count2: histogram(&x2.labels),
        cross: cross.into_iter().collect(),
    })
}

/// Mask pairs `(m, n)` whose overlap strictly exceeds `delta · min(σ¹ₘ, σ²ₙ)`,
/// in ascending order.
pub fn merge_decisions(stats: &OverlapStats, delta: f64) -> Vec<(u32, u32)> {
    stats
        .cross
        .iter()
        .filter(|&(&(m, n), &c)| {
            let smaller = stats.count1[&m].min(stats.count2[&n]);
            c as f64 > delta * smaller as f64
        })
        .map(|(&pair, _)| pair)
        .collect()
}

/// Disjoint sets over mask ids; each class is represented by its smallest id.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: HashMap<u32, u32>,
}

impl UnionFind {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn find(&mut self, id: u32) -> u32 {
        let mut root = id;
        while let Some(&p) = self.parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut node = id;
        while node != root {
            let next = self.parent[&node];
            self.parent.insert(node, root);
            node = next;
        }
        root
    }

    /// Joins the classes of `a` and `b`; returns the class representative.
    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra <= rb { (ra, rb) } else { (rb, ra) };
        self.parent.insert(lo, lo);
        if lo != hi {
            self.parent.insert(hi, lo);
        }
        lo
    }
}

/// Decision counts from one bidirectional merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    pub forward_decisions: usize,
    pub backward_decisions: usize,
    /// Distinct `(x1 id, x2 id)` pairs unified by either pass.
    pub unified_pairs: usize,
}

fn check_disjoint(x1: &LabeledCloud, x2: &LabeledCloud) -> Result<()> {
    let a = x1.label_set();
    match x2.label_set().into_iter().find(|l| a.contains(l)) {
        Some(l) => Err(Error::LabelOverlap(l)),
        None => Ok(()),
    }
}

/// Both passes' unification pairs as `(x1 id, x2 id)`.
pub fn bidirectional_decisions(
    x1: &LabeledCloud,
    x2: &LabeledCloud,
    forward: &CorrespondenceSet,
    backward: &CorrespondenceSet,
    delta: f64,
) -> Result<(Vec<(u32, u32)>, MergeOutcome)> {
    let fwd = merge_decisions(&overlap_stats(x1, x2, forward)?, delta);
    let bwd = merge_decisions(&overlap_stats(x2, x1, backward)?, delta);
    let all: BTreeSet<(u32, u32)> = fwd
        .iter()
        .copied()
        .chain(bwd.iter().map(|&(n, m)| (m, n)))
        .collect();
    let outcome = MergeOutcome {
        forward_decisions: fwd.len(),
        backward_decisions: bwd.len(),
        unified_pairs: all.len(),
    };
    Ok((all.into_iter().collect(), outcome))
}

pub fn bidirectional_merge(
    x1: &LabeledCloud,
    x2: &LabeledCloud,
    cfg: &MergeConfig,
) -> Result<LabeledCloud> {
    bidirectional_merge_with_outcome(x1, x2, cfg).map(|(c, _)| c)
}

/// [`bidirectional_merge`] that also reports how many decisions fired.
pub fn bidirectional_merge_with_outcome(
    x1: &LabeledCloud,
    x2: &LabeledCloud,
    cfg: &MergeConfig,
) -> Result<(LabeledCloud, MergeOutcome)> {
    cfg.validate()?;
    check_disjoint(x1, x2)?;
    let forward = find_correspondences(x1, x2, cfg.match_radius);
    let backward = find_correspondences(x2, x1, cfg.match_radius);
    let (pairs, outcome) = bidirectional_decisions(x1, x2, &forward, &backward, cfg.delta)?;

    let mut uf = UnionFind::new();
    for (m, n) in pairs {
        uf.union(m, n);
    }
    let mut merged = x1.concat(x2);
    let mut canon: HashMap<u32, u32> = HashMap::new();
    for l in merged.labels.iter_mut().filter(|l| **l != 0) {
        *l = *canon.entry(*l).or_insert_with(|| uf.find(*l));
    }
    if cfg.pool_after_merge {
        merged = grid_pool(&merged, &cfg.pool)?;
    }
    Ok((merged, outcome))
}

/// One pairwise merge inside the tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeRecord {
    pub level: usize,
    /// Position of the left operand within its level.
    pub left: usize,
    pub right: usize,
    /// Inclusive range of input cloud indices covered by the result.
    pub frames: [usize; 2],
    pub unified_pairs: usize,
    pub points: usize,
}

/// Per-level merge records. Serializes as a JSON array of arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct MergeTreeTrace {
    pub levels: Vec<Vec<MergeRecord>>,
}

impl MergeTreeTrace {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn merge_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

/// An item with the first and last frame index it covers.
type Span<T> = (T, [usize; 2]);

/// Pairs neighbors `(2i, 2i+1)` level by level until one item remains. A
/// trailing unpaired item is carried to the next level untouched. Sibling
/// combinations within a level run in parallel; `combine` returns the merged
/// item and the number of unified id pairs; `size` reports the point count
/// recorded in the trace.
pub fn tree_reduce<T, F, S>(items: Vec<T>, combine: F, size: S) -> Result<(T, MergeTreeTrace)>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> Result<(T, usize)> + Sync,
    S: Fn(&T) -> usize + Sync,
{
    if items.is_empty() {
        return Err(Error::EmptyInput("no clouds to merge"));
    }
    let mut level: Vec<Span<T>> = items
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, [i, i]))
        .collect();
    let mut trace = MergeTreeTrace::default();
    while level.len() > 1 {
        let depth = trace.levels.len();
        let next: Vec<(Span<T>, Option<MergeRecord>)> = level
            .par_chunks(2)
            .enumerate()
            .map(|(i, chunk)| match chunk {
                [(a, fa), (b, fb)] => {
                    let (merged, unified_pairs) = combine(a, b)?;
                    let frames = [fa[0], fb[1]];
                    let points = size(&merged);
                    Ok((
                        (merged, frames),
                        Some(MergeRecord {
                            level: depth,
                            left: 2 * i,
                            right: 2 * i + 1,
                            frames,
                            unified_pairs,
                            points,
                        }),
                    ))
                }
                [carried] => Ok((carried.clone(), None)),
                _ => unreachable!("chunks of two"),
            })
            .collect::<Result<_>>()?;
        let mut records = Vec::new();
        level = next
            .into_iter()
            .map(|(item, rec)| {
                records.extend(rec);
                item
            })
            .collect();
        trace.levels.push(records);
    }
    let (root, _) = level.pop().expect("one item remains");
    Ok((root, trace))
}

/// Folds per-frame clouds into one scene cloud with a binary tree of
/// bidirectional merges: `K − 1` merges over `⌈log₂ K⌉` levels.
pub fn bottom_up_merge(
    clouds: Vec<LabeledCloud>,
    cfg: &MergeConfig,
) -> Result<(LabeledCloud, MergeTreeTrace)> {
    cfg.validate()?;
    if clouds.is_empty() {
        return Err(Error::EmptyInput("no clouds to merge"));
    }
    let mut owner: HashMap<u32, usize> = HashMap::new();
    for (ci, c) in clouds.iter().enumerate() {
        for l in c.label_set() {
            if let Some(&other) = owner.get(&l) {
                if other != ci {
                    return Err(Error::LabelOverlap(l));
                }
            }
            owner.insert(l, ci);
        }
    }
    if clouds.len() == 1 {
        let only = clouds.into_iter().next().unwrap();
        let out = if cfg.pool_after_merge {
            grid_pool(&only, &cfg.pool)?
        } else {
            only
        };
        return Ok((out, MergeTreeTrace::default()));
    }
    tree_reduce(
        clouds,
        |a, b| {
            let (merged, outcome) = bidirectional_merge_with_outcome(a, b, cfg)?;
            Ok((merged, outcome.unified_pairs))
        },
        LabeledCloud::len,
    )
}
