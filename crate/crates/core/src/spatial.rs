//! Spatial indices over 3D points.
//!
//! [`HashGrid`] answers fixed-radius nearest-neighbor queries (correspondence
//! search); [`KdTree`] answers k-nearest-neighbor queries (normal estimation
//! and graph construction). Both break distance ties toward the smaller point
//! index so results never depend on build order or thread schedule.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::Vector3;

#[inline]
fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm_squared()
}

/// (squared distance, index) compared lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform hash grid with cubic cells of side `cell`.
pub struct HashGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> HashGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Nearest indexed point within `radius` (inclusive) of `q`. The radius
    /// must not exceed the cell size.
    pub fn nearest_within(&self, q: &Vector3<f64>, radius: f64) -> Option<usize> {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let r2 = radius * radius;
        let [kx, ky, kz] = Self::key(q, self.cell);
        let mut best: Option<Candidate> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        let d2 = dist2(q, &self.points[j]);
                        if d2 > r2 {
                            continue;
                        }
                        let c = Candidate { d2, idx: j };
                        if best.is_none_or(|b| c < b) {
                            best = Some(c);
                        }
                    }
                }
            }
        }
        best.map(|c| c.idx)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 12;

/// Static 3-d tree.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `q`, sorted by (distance, index). Returns
    /// fewer than `k` only when the tree holds fewer points.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.d2.sqrt())).collect()
    }

    fn search(&self, node: usize, q: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        idx: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Points equal to the split value may sit on either side.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
