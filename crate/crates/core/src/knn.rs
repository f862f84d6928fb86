//! Exact k-nearest-neighbor search over feature vectors.
//!
//! Two query paths share one distance routine: a linear scan (the
//! reference) and a kd-tree. The tree prunes a subtree only when its
//! bounding-box lower bound strictly exceeds the current k-th best
//! squared distance, and candidate ordering is always the pair
//! (squared distance, reference row id). Both facts together make tree
//! output equal the scan output exactly, ties and float rounding
//! included. Above [`BRUTE_FORCE_DIM_THRESHOLD`] dimensions the index
//! skips tree construction and scans.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Dimensionality above which the index degrades to a linear scan.
pub const BRUTE_FORCE_DIM_THRESHOLD: usize = 30;

const LEAF_SIZE: usize = 16;

/// The k nearest reference rows for one query, nearest first.
///
/// Distances are Euclidean, ascending; ties are broken by ascending
/// reference row id. Length is `min(k, reference size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Immutable nearest-neighbor index over a copied reference set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    n: usize,
    /// Row-major flat copy of the reference points.
    points: Vec<f64>,
    tree: Option<Tree>,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Permutation of reference ids; leaves own contiguous slices of it.
    order: Vec<u32>,
    root: u32,
}

#[derive(Debug, Clone)]
struct Node {
    min: Vec<f64>,
    max: Vec<f64>,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, end: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Coordinates are finite, so d2 is finite and total_cmp matches
        // the numeric order.
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Squared Euclidean distance, accumulated in axis order. The kd-tree
/// bound below sums term-wise smaller values in the same order, which
/// keeps the float bound below the float distance.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        let d = a[j] - b[j];
        s += d * d;
    }
    s
}

fn bbox_lower_bound(min: &[f64], max: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..q.len() {
        let e = if q[j] < min[j] {
            min[j] - q[j]
        } else if q[j] > max[j] {
            q[j] - max[j]
        } else {
            0.0
        };
        s += e * e;
    }
    s
}

/// Build an index over the reference points. Row order is retained for
/// tie-breaking.
pub fn build_index(points: &[Vec<f64>]) -> Result<NeighborIndex> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyReference);
    }
    let dim = points[0].len();
    for row in points {
        if row.len() != dim {
            return Err(Error::ArityMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        debug_assert!(row.iter().all(|v| v.is_finite()));
    }
    let mut flat = Vec::with_capacity(n * dim);
    for row in points {
        flat.extend_from_slice(row);
    }
    let tree = if dim > 0 && dim <= BRUTE_FORCE_DIM_THRESHOLD {
        Some(build_tree(&flat, n, dim))
    } else {
        None
    };
    Ok(NeighborIndex {
        dim,
        n,
        points: flat,
        tree,
    })
}

fn build_tree(points: &[f64], n: usize, dim: usize) -> Tree {
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut nodes = Vec::new();
    let root = build_node(points, dim, &mut order, 0, n, &mut nodes);
    Tree { nodes, order, root }
}

fn build_node(
    points: &[f64],
    dim: usize,
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for &id in &order[start..end] {
        let row = &points[id as usize * dim..id as usize * dim + dim];
        for j in 0..dim {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }

    let len = end - start;
    let mut split_dim = 0;
    let mut best_extent = 0.0;
    for j in 0..dim {
        let extent = max[j] - min[j];
        if extent > best_extent {
            best_extent = extent;
            split_dim = j;
        }
    }

    if len <= LEAF_SIZE || best_extent == 0.0 {
        nodes.push(Node {
            min,
            max,
            kind: NodeKind::Leaf {
                start: start as u32,
                end: end as u32,
            },
        });
        return (nodes.len() - 1) as u32;
    }

    let mid = len / 2;
    let coord = |id: u32| points[id as usize * dim + split_dim];
    order[start..end]
        .select_nth_unstable_by(mid, |&a, &b| coord(a).total_cmp(&coord(b)).then(a.cmp(&b)));
    let left = build_node(points, dim, order, start, start + mid, nodes);
    let right = build_node(points, dim, order, start + mid, end, nodes);
    nodes.push(Node {
        min,
        max,
        kind: NodeKind::Inner { left, right },
    });
    (nodes.len() - 1) as u32
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..id * self.dim + self.dim]
    }

    fn scan_into(&self, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        for id in 0..self.n {
            push_candidate(
                heap,
                k,
                Candidate {
                    d2: dist2(self.point(id), query),
                    id: id as u32,
                },
            );
        }
    }

    fn search_node(&self, tree: &Tree, node: u32, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match &tree.nodes[node as usize].kind {
            NodeKind::Leaf { start, end } => {
                for &id in &tree.order[*start as usize..*end as usize] {
                    push_candidate(
                        heap,
                        k,
                        Candidate {
                            d2: dist2(self.point(id as usize), query),
                            id,
                        },
                    );
                }
            }
            NodeKind::Inner { left, right } => {
                let lb = |c: u32| {
                    let nd = &tree.nodes[c as usize];
                    bbox_lower_bound(&nd.min, &nd.max, query)
                };
                let (lb_l, lb_r) = (lb(*left), lb(*right));
                let visit = if lb_l <= lb_r {
                    [(*left, lb_l), (*right, lb_r)]
                } else {
                    [(*right, lb_r), (*left, lb_l)]
                };
                for (child, child_lb) in visit {
                    // Equal bounds must still be visited: a tied point with
                    // a smaller id may displace the current worst.
                    if heap.len() < k || child_lb <= heap.peek().unwrap().d2 {
                        self.search_node(tree, child, query, k, heap);
                    }
                }
            }
        }
    }
}

fn push_candidate(heap: &mut BinaryHeap<Candidate>, k: usize, cand: Candidate) {
    if heap.len() < k {
        heap.push(cand);
    } else if cand < *heap.peek().unwrap() {
        heap.pop();
        heap.push(cand);
    }
}

/// The k nearest reference rows to `query`. If `k` exceeds the reference
/// size, all rows are returned.
pub fn query_knn(index: &NeighborIndex, query: &[f64], k: usize) -> Result<NeighborList> {
    if query.len() != index.dim {
        return Err(Error::ArityMismatch {
            expected: index.dim,
            got: query.len(),
        });
    }
    assert!(k >= 1, "k must be at least 1");
    let k = k.min(index.n);
    let mut heap = BinaryHeap::with_capacity(k + 1);
    match &index.tree {
        Some(tree) => index.search_node(tree, tree.root, query, k, &mut heap),
        None => index.scan_into(query, k, &mut heap),
    }
    let mut cands = heap.into_vec();
    cands.sort_unstable();
    Ok(NeighborList {
        indices: cands.iter().map(|c| c.id as usize).collect(),
        distances: cands.iter().map(|c| c.d2.sqrt()).collect(),
    })
}

/// Reference linear scan over raw points, bypassing index construction.
pub fn brute_force_knn(points: &[Vec<f64>], query: &[f64], k: usize) -> Result<NeighborList> {
    if points.is_empty() {
        return Err(Error::EmptyReference);
    }
    if query.len() != points[0].len() {
        return Err(Error::ArityMismatch {
            expected: points[0].len(),
            got: query.len(),
        });
    }
    let mut cands: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(id, p)| Candidate {
            d2: dist2(p, query),
            id: id as u32,
        })
        .collect();
    cands.sort_unstable();
    cands.truncate(k);
    Ok(NeighborList {
        indices: cands.iter().map(|c| c.id as usize).collect(),
        distances: cands.iter().map(|c| c.d2.sqrt()).collect(),
    })
}
