//! Geometric over-segmentation and its ensemble with the merged masks.
//!
//! Normals come from PCA over k-nearest neighborhoods. A k-NN graph weighted
//! by `1 − |nᵢ·nⱼ|` is cut with Felzenszwalb–Huttenlocher graph segmentation,
//! then small segments are absorbed. [`ensemble`] unifies the resulting
//! segments with scene masks using the same overlap criterion as frame
//! merging, so every final mask is a union of whole segments.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::camera::Point3;
use crate::error::{Error, Result};
use crate::lift::LabeledCloud;
use crate::merge::{merge_decisions, overlap_stats, CorrespondenceSet, UnionFind};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OversegConfig {
    pub knn: usize,
    /// Scale constant `k` of the merge predicate.
    pub fz_k: f64,
    pub min_segment: usize,
}

impl Default for OversegConfig {
    fn default() -> Self {
        Self {
            knn: 16,
            fz_k: 0.1,
            min_segment: 20,
        }
    }
}

impl OversegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn < 1 {
            return Err(Error::Config("knn must be at least 1".into()));
        }
        if !(self.fz_k > 0.0 && self.fz_k.is_finite()) {
            return Err(Error::Config(format!(
                "fz_k must be positive, got {}",
                self.fz_k
            )));
        }
        if self.min_segment < 1 {
            return Err(Error::Config("min_segment must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalCloud {
    pub points: Vec<Point3>,
    pub normals: Vec<Vector3<f64>>,
}

/// Flips `n` so its largest-magnitude component is positive; near-ties go to
/// the first axis.
fn orient(n: Vector3<f64>) -> Vector3<f64> {
    let max = n.amax();
    let axis = (0..3).find(|&a| n[a].abs() >= max - 1e-9).unwrap_or(0);
    if n[axis] < 0.0 {
        -n
    } else {
        n
    }
}

fn smallest_eigenvector(cov: Matrix3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    eig.eigenvectors.column(i).normalize()
}

/// PCA normal of every point from its `k` nearest neighbors (itself included).
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<NormalCloud> {
    if k < 3 {
        return Err(Error::Config(format!("normal estimation needs k ≥ 3, got {k}")));
    }
    if points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: points.len(),
        });
    }
    let coords: Vec<Vector3<f64>> = points.iter().map(|p| p.coords).collect();
    let tree = KdTree::new(&coords);
    let normals = coords
        .par_iter()
        .map(|q| {
            let nbrs = tree.knn(q, k);
            let inv = 1.0 / nbrs.len() as f64;
            let mean = nbrs.iter().map(|&(j, _)| coords[j]).sum::<Vector3<f64>>() * inv;
            let mut cov = Matrix3::zeros();
            for &(j, _) in &nbrs {
                let d = coords[j] - mean;
                cov += d * d.transpose();
            }
            orient(smallest_eigenvector(cov * inv))
        })
        .collect();
    Ok(NormalCloud {
        points: points.to_vec(),
        normals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Dissimilarity in [0, 1].
    pub weight: f64,
}

/// Undirected weighted graph; edges satisfy `a < b` and are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SegGraph {
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

pub fn normal_dissimilarity(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (1.0 - a.dot(b).abs()).clamp(0.0, 1.0)
}

/// Connects each point to its `knn` nearest neighbors.
pub fn build_graph(nc: &NormalCloud, knn: usize) -> SegGraph {
    let coords: Vec<Vector3<f64>> = nc.points.iter().map(|p| p.coords).collect();
    let tree = KdTree::new(&coords);
    let mut pairs: Vec<(usize, usize)> = coords
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, q)| {
            tree.knn(q, knn + 1)
                .into_iter()
                .filter(move |&(j, _)| j != i)
                .take(knn)
                .map(move |(j, _)| (i.min(j), i.max(j)))
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    let edges = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            weight: normal_dissimilarity(&nc.normals[a], &nc.normals[b]),
        })
        .collect();
    SegGraph {
        nodes: nc.points.len(),
        edges,
    }
}

/// Per-point segment ids, contiguous from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oversegmentation {
    pub segment_id: Vec<u32>,
}

impl Oversegmentation {
    pub fn segment_count(&self) -> usize {
        self.segment_id.iter().copied().max().unwrap_or(0) as usize
    }
}

struct Components {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: usize, b: usize, weight: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(weight);
    }
}

/// Edges in the order the segmentation consumes them: ascending weight, then
/// ascending endpoints.
pub fn sorted_edges(g: &SegGraph) -> Vec<Edge> {
    let mut edges = g.edges.clone();
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    edges
}

/// Felzenszwalb–Huttenlocher segmentation followed by small-segment absorption.
pub fn felzenszwalb_segment(g: &SegGraph, cfg: &OversegConfig) -> Result<Oversegmentation> {
    cfg.validate()?;
    for e in &g.edges {
        if e.a == e.b || e.a >= g.nodes || e.b >= g.nodes || !(e.weight >= 0.0 && e.weight.is_finite()) {
            return Err(Error::MalformedInput(format!("invalid graph edge {e:?}")));
        }
    }
    let edges = sorted_edges(g);
    let mut comps = Components::new(g.nodes);
    for e in &edges {
        let (ca, cb) = (comps.find(e.a), comps.find(e.b));
        if ca == cb {
            continue;
        }
        let ta = comps.internal[ca] + cfg.fz_k / comps.size[ca] as f64;
        let tb = comps.internal[cb] + cfg.fz_k / comps.size[cb] as f64;
        if e.weight <= ta.min(tb) {
            comps.join(ca, cb, e.weight);
        }
    }
    // Absorb undersized components through their cheapest remaining edge.
    for e in &edges {
        let (ca, cb) = (comps.find(e.a), comps.find(e.b));
        if ca != cb && (comps.size[ca] < cfg.min_segment || comps.size[cb] < cfg.min_segment) {
            comps.join(ca, cb, e.weight);
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let segment_id = (0..g.nodes)
        .map(|i| {
            let root = comps.find(i);
            let next = ids.len() as u32 + 1;
            *ids.entry(root).or_insert(next)
        })
        .collect();
    Ok(Oversegmentation { segment_id })
}

/// Normals, graph and segmentation in one call. `knn` is clamped to the
/// point count for small clouds.
pub fn oversegment(points: &[Point3], cfg: &OversegConfig) -> Result<Oversegmentation> {
    cfg.validate()?;
    let k = cfg.knn.min(points.len()).max(3);
    let normals = estimate_normals(points, k)?;
    let graph = build_graph(&normals, cfg.knn);
    felzenszwalb_segment(&graph, cfg)
}

/// Unifies scene masks with over-segments. Segment `s` enters as mask id
/// `s + max scene label`, matched to the scene through the identity
/// correspondence in both directions. Each point's final label is the class
/// representative of its segment, so labels are nonzero everywhere and
/// constant on every segment.
pub fn ensemble(scene: &LabeledCloud, overseg: &Oversegmentation, delta: f64) -> Result<LabeledCloud> {
    if overseg.segment_id.len() != scene.len() {
        return Err(Error::MalformedInput(format!(
            "over-segmentation covers {} points but the scene has {}",
            overseg.segment_id.len(),
            scene.len()
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1], got {delta}")));
    }
    if overseg.segment_id.contains(&0) {
        return Err(Error::MalformedInput("segment id 0 is reserved".into()));
    }
    let offset = scene.max_label();
    let shifted: Vec<u32> = overseg
        .segment_id
        .iter()
        .map(|&s| {
            s.checked_add(offset)
                .ok_or_else(|| Error::MalformedInput("segment ids overflow the id space".into()))
        })
        .collect::<Result<_>>()?;
    let segments = LabeledCloud {
        points: scene.points.clone(),
        labels: shifted,
    };
    let identity = CorrespondenceSet::identity(scene.len());
    let forward = merge_decisions(&overlap_stats(scene, &segments, &identity)?, delta);
    let backward = merge_decisions(&overlap_stats(&segments, scene, &identity)?, delta);

    let mut uf = UnionFind::new();
    for (m, s) in forward.into_iter().chain(backward.into_iter().map(|(s, m)| (m, s))) {
        uf.union(m, s);
    }
    let mut canon: HashMap<u32, u32> = HashMap::new();
    let labels = segments
        .labels
        .iter()
        .map(|&s| *canon.entry(s).or_insert_with(|| uf.find(s)))
        .collect();
    Ok(LabeledCloud {
        points: segments.points,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::CloudPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn grid_plane(n: usize, map: impl Fn(f64, f64) -> Point3) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(map(i as f64 * 0.1, j as f64 * 0.1));
            }
        }
        pts
    }

    #[test]
    fn flat_plane_normals() {
        let pts = grid_plane(10, |a, b| Point3::new(a, b, 0.0));
        let nc = estimate_normals(&pts, 8).unwrap();
        for n in &nc.normals {
            assert!((n - Vector3::z()).norm() < 1e-6, "{n:?}");
        }
    }

    #[test]
    fn diagonal_plane_normals() {
        // Plane x = y: covariance spans (1,1,0)/√2 and z, so the normal is
        // (1,−1,0)/√2 up to sign; the sign rule picks +x.
        let pts = grid_plane(10, |a, b| Point3::new(a, a, b));
        let nc = estimate_normals(&pts, 8).unwrap();
        let expect = Vector3::new(1.0, -1.0, 0.0) / 2f64.sqrt();
        for n in &nc.normals {
            assert!((n - expect).norm() < 1e-6, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                );
                Point3::from(v.normalize())
            })
            .collect();
        let nc = estimate_normals(&pts, 12).unwrap();
        let limit = 5f64.to_radians().cos();
        for (p, n) in pts.iter().zip(&nc.normals) {
            assert!(n.dot(&p.coords).abs() >= limit, "{p:?} {n:?}");
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Point3::origin(); 4];
        assert!(matches!(
            estimate_normals(&pts, 5),
            Err(Error::InsufficientPoints { needed: 5, got: 4 })
        ));
        assert!(estimate_normals(&pts, 2).is_err());
    }

    #[test]
    fn graph_weights() {
        let nc = NormalCloud {
            points: vec![Point3::origin(), Point3::new(0.1, 0.0, 0.0), Point3::new(0.0, 0.1, 0.0)],
            normals: vec![Vector3::z(), -Vector3::z(), Vector3::x()],
        };
        let g = build_graph(&nc, 2);
        assert_eq!(g.edges.len(), 3);
        let w: BTreeMap<(usize, usize), f64> = g.edges.iter().map(|e| ((e.a, e.b), e.weight)).collect();
        assert_eq!(w[&(0, 1)], 0.0);
        assert_eq!(w[&(0, 2)], 1.0);
        assert_eq!(w[&(1, 2)], 1.0);
    }

    #[test]
    fn random_graph_weights_match_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let points: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let normals: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64)).normalize())
            .collect();
        let nc = NormalCloud { points, normals };
        let g = build_graph(&nc, 6);
        let mut seen = BTreeSet::new();
        for e in &g.edges {
            assert!(e.a < e.b);
            assert!(seen.insert((e.a, e.b)));
            let na = nc.normals[e.a];
            let nb = nc.normals[e.b];
            let dot = na.x * nb.x + na.y * nb.y + na.z * nb.z;
            assert!((e.weight - (1.0 - dot.abs())).abs() < 1e-9);
        }
        // Every node reaches at least its own knn.
        let mut degree = vec![0; n];
        for e in &g.edges {
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        assert!(degree.iter().all(|&d| d >= 6));
    }

    #[test]
    fn zero_weight_graph_is_one_segment() {
        let edges = (0..9)
            .map(|i| Edge {
                a: i,
                b: i + 1,
                weight: 0.0,
            })
            .collect();
        let g = SegGraph { nodes: 10, edges };
        let cfg = OversegConfig {
            min_segment: 5,
            ..OversegConfig::default()
        };
        let seg = felzenszwalb_segment(&g, &cfg).unwrap();
        assert!(seg.segment_id.iter().all(|&s| s == 1));
    }

    #[test]
    fn disconnected_components_stay_apart() {
        let mut edges = Vec::new();
        for i in 0..4 {
            edges.push(Edge { a: i, b: i + 1, weight: 0.0 });
            edges.push(Edge { a: i + 5, b: i + 6, weight: 0.0 });
        }
        let g = SegGraph { nodes: 10, edges };
        let cfg = OversegConfig {
            min_segment: 100,
            ..OversegConfig::default()
        };
        let seg = felzenszwalb_segment(&g, &cfg).unwrap();
        assert!(seg.segment_id[..5].iter().all(|&s| s == seg.segment_id[0]));
        assert!(seg.segment_id[5..].iter().all(|&s| s == seg.segment_id[5]));
        assert_ne!(seg.segment_id[0], seg.segment_id[5]);
        assert_eq!(seg.segment_count(), 2);
    }

    #[test]
    fn rejects_bad_edges() {
        let g = SegGraph {
            nodes: 2,
            edges: vec![Edge { a: 0, b: 0, weight: 0.1 }],
        };
        assert!(felzenszwalb_segment(&g, &OversegConfig::default()).is_err());
        let g = SegGraph {
            nodes: 2,
            edges: vec![Edge { a: 0, b: 1, weight: -0.1 }],
        };
        assert!(felzenszwalb_segment(&g, &OversegConfig::default()).is_err());
    }

    fn line_cloud(labels: &[u32]) -> LabeledCloud {
        LabeledCloud::new(
            (0..labels.len()).map(|i| CloudPoint::new(i as f32, 0.0, 0.0)).collect(),
            labels.to_vec(),
        )
        .unwrap()
    }

    fn same_partition(a: &[u32], b: &[u32]) -> bool {
        let mut ab: HashMap<u32, u32> = HashMap::new();
        let mut ba: HashMap<u32, u32> = HashMap::new();
        a.iter().zip(b).all(|(&x, &y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
    }

    #[test]
    fn ensemble_identical_partition() {
        let scene = line_cloud(&[3, 3, 3, 8, 8, 5]);
        let seg = Oversegmentation {
            segment_id: vec![1, 1, 1, 2, 2, 3],
        };
        let out = ensemble(&scene, &seg, 0.5).unwrap();
        assert!(same_partition(&out.labels, &scene.labels));
        assert_eq!(out.labels, scene.labels);
    }

    #[test]
    fn ensemble_fills_unlabeled_segment_points() {
        // Segment 1 has 10 points: 6 carry mask 4, 4 are unlabeled. Mask 4 has
        // 6 points, so cross = 6 > 0.5·min(6, 10) = 3.
        let mut labels = vec![4; 6];
        labels.extend([0; 4]);
        labels.extend([9; 5]);
        let scene = line_cloud(&labels);
        let mut seg_ids = vec![1; 10];
        seg_ids.extend([2; 5]);
        let out = ensemble(&scene, &Oversegmentation { segment_id: seg_ids }, 0.5).unwrap();
        assert!(out.labels[..10].iter().all(|&l| l == 4));
        assert!(out.labels[10..].iter().all(|&l| l == 9));
    }

    #[test]
    fn ensemble_split_segment_does_not_bridge() {
        // Segment 1 (10 points) is 4/4 split across masks 1 and 2 (each 20
        // points) with 2 unlabeled points: 4 > 0.5·min(20, 10) = 5 is false.
        let mut labels = vec![1; 4];
        labels.extend([2; 4]);
        labels.extend([0; 2]);
        labels.extend([1; 16]);
        labels.extend([2; 16]);
        let scene = line_cloud(&labels);
        let mut seg_ids = vec![1; 10];
        seg_ids.extend([2; 16]);
        seg_ids.extend([3; 16]);
        let out = ensemble(&scene, &Oversegmentation { segment_id: seg_ids }, 0.5).unwrap();
        let seg1 = out.labels[0];
        assert!(out.labels[..10].iter().all(|&l| l == seg1));
        assert_ne!(out.labels[10], out.labels[26]);
        assert_eq!(out.labels[10], 1);
        assert_eq!(out.labels[26], 2);
        assert!(seg1 != 1 && seg1 != 2);
    }

    #[test]
    fn ensemble_length_mismatch() {
        let scene = line_cloud(&[1, 1]);
        let seg = Oversegmentation { segment_id: vec![1] };
        assert!(matches!(ensemble(&scene, &seg, 0.5), Err(Error::MalformedInput(_))));
    }
}
