use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::LabeledCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub gt: u32,
    /// `None` when the true instance is left unmatched.
    pub pred: Option<u32>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// One entry per true instance, ascending by id.
    pub matches: Vec<InstanceMatch>,
    /// Averaged over all true instances; unmatched ones count as 0.
    pub mean_iou: f64,
    pub pred_count: usize,
    pub gt_count: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
}

/// Maximum-weight one-to-one assignment for a dense `rows × cols` matrix.
/// Returns the column assigned to each row (`None` if rows outnumber columns).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| weights[i][j]).collect())
            .collect();
        let by_col = max_weight_assignment(&transposed);
        let mut rows = vec![None; n];
        for (j, i) in by_col.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }

    // Shortest augmenting path Hungarian method on costs -w, n ≤ m,
    // 1-based with a virtual column 0.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}

/// Scores a predicted labeling against ground truth by one-to-one matching of
/// instances that maximizes total IoU. Label 0 is ignored on both sides.
pub fn hungarian_match_iou(pred: &[u32], gt: &[u32]) -> Result<MatchReport> {
    if pred.len() != gt.len() {
        return Err(Error::Alignment(format!(
            "prediction has {} labels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut pred_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 {
            *pred_size.entry(p).or_default() += 1;
        }
        if g != 0 {
            *gt_size.entry(g).or_default() += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((g, p)).or_default() += 1;
        }
    }
    let gt_ids: Vec<u32> = gt_size.keys().copied().collect();
    let pred_ids: Vec<u32> = pred_size.keys().copied().collect();
    let pred_index: BTreeMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let gt_index: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();

    let mut iou = vec![vec![0.0; pred_ids.len()]; gt_ids.len()];
    for (&(g, p), &n) in &inter {
        let union = gt_size[&g] + pred_size[&p] - n;
        iou[gt_index[&g]][pred_index[&p]] = n as f64 / union as f64;
    }
    let assignment = max_weight_assignment(&iou);

    let mut matches = Vec::with_capacity(gt_ids.len());
    let mut matched_pred = 0;
    for (gi, &g) in gt_ids.iter().enumerate() {
        // A zero-IoU pairing is not a match.
        match assignment[gi].filter(|&pi| iou[gi][pi] > 0.0) {
            Some(pi) => {
                matched_pred += 1;
                matches.push(InstanceMatch {
                    gt: g,
                    pred: Some(pred_ids[pi]),
                    iou: iou[gi][pi],
                });
            }
            None => matches.push(InstanceMatch {
                gt: g,
                pred: None,
                iou: 0.0,
            }),
        }
    }
    let total: f64 = matches.iter().map(|m| m.iou).sum();
    let mean_iou = if gt_ids.is_empty() {
        0.0
    } else {
        total / gt_ids.len() as f64
    };
    Ok(MatchReport {
        mean_iou,
        pred_count: pred_ids.len(),
        gt_count: gt_ids.len(),
        unmatched_pred: pred_ids.len() - matched_pred,
        unmatched_gt: gt_ids.len() - matched_pred,
        matches,
    })
}

/// Scores a predicted cloud against a ground-truth cloud over the same points.
/// Coordinates must agree within `tolerance` meters point by point.
pub fn evaluate_clouds(pred: &LabeledCloud, gt: &LabeledCloud, tolerance: f64) -> Result<MatchReport> {
    if pred.len() != gt.len() {
        return Err(Error::Alignment(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(i) = pred
        .points
        .iter()
        .zip(&gt.points)
        .position(|(a, b)| (a.coords.cast::<f64>() - b.coords.cast::<f64>()).amax() > tolerance)
    {
        return Err(Error::Alignment(format!(
            "point {i} differs: {:?} vs {:?}",
            pred.points[i].coords.as_slice(),
            gt.points[i].coords.as_slice()
        )));
    }
    hungarian_match_iou(&pred.labels, &gt.labels)
}
