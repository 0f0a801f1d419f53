use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::points::{sq_dist, Points};

const DEFAULT_LEAF: usize = 16;

/// Balanced k-d tree over a fixed point set. Query results are ordered by
/// `(squared distance, index)`, so ties always go to the lower index.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    data: Vec<f64>,
    idx: Vec<usize>,
    slot: Vec<usize>,
    nodes: Vec<Node>,
    d: usize,
    n: usize,
    leaf_size: usize,
}

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    end: usize,
    split_dim: usize,
    split: f64,
    children: Option<(usize, usize)>,
}

impl SpatialIndex {
    pub fn build(points: &Points) -> Self {
        SpatialIndex::with_leaf_size(points, DEFAULT_LEAF)
    }

    pub fn with_leaf_size(points: &Points, leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let n = points.len();
        let d = points.dim();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(points, &mut idx, 0, n, leaf_size, &mut nodes);
        }
        let mut data = Vec::with_capacity(n * d);
        for &i in &idx {
            data.extend_from_slice(points.row(i));
        }
        let mut slot = vec![0; n];
        for (s, &i) in idx.iter().enumerate() {
            slot[i] = s;
        }
        SpatialIndex { data, idx, slot, nodes, d, n, leaf_size }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// The point with original index `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        let s = self.slot[i];
        &self.data[s * self.d..(s + 1) * self.d]
    }

    /// The `k` nearest points as `(index, squared distance)`.
    pub fn knn(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.knn_filtered(x, k, |_| true)
    }

    /// The `k` nearest points among those whose index passes `keep`.
    pub fn knn_filtered<F: Fn(usize) -> bool>(&self, x: &[f64], k: usize, keep: F) -> Vec<(usize, f64)> {
        if k == 0 || self.n == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, x, k, &keep, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.idx, c.d2)).collect();
        out.sort_by(|a, b| cmp_pair(*a, *b));
        out
    }

    fn knn_rec<F: Fn(usize) -> bool>(&self, node: usize, x: &[f64], k: usize, keep: &F, heap: &mut BinaryHeap<Cand>) {
        let nd = &self.nodes[node];
        match nd.children {
            None => {
                for slot in nd.start..nd.end {
                    let i = self.idx[slot];
                    if !keep(i) {
                        continue;
                    }
                    let d2 = sq_dist(x, &self.data[slot * self.d..(slot + 1) * self.d]);
                    let c = Cand { d2, idx: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Some((l, r)) => {
                let diff = x[nd.split_dim] - nd.split;
                let (near, far) = if diff <= 0.0 { (l, r) } else { (r, l) };
                self.knn_rec(near, x, k, keep, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.knn_rec(far, x, k, keep, heap);
                }
            }
        }
    }

    /// All points within distance `r` (inclusive), sorted.
    pub fn within_radius(&self, x: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(x, r * r, |i, d2| out.push((i, d2)));
        out.sort_by(|a, b| cmp_pair(*a, *b));
        out
    }

    /// Calls `f(index, squared distance)` for every point with squared
    /// distance at most `r2`, in no particular order.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, x: &[f64], r2: f64, mut f: F) {
        if self.n == 0 {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let nd = &self.nodes[node];
            match nd.children {
                None => {
                    for slot in nd.start..nd.end {
                        let d2 = sq_dist(x, &self.data[slot * self.d..(slot + 1) * self.d]);
                        if d2 <= r2 {
                            f(self.idx[slot], d2);
                        }
                    }
                }
                Some((l, r)) => {
                    let diff = x[nd.split_dim] - nd.split;
                    if diff <= 0.0 {
                        stack.push(l);
                        if diff * diff <= r2 {
                            stack.push(r);
                        }
                    } else {
                        stack.push(r);
                        if diff * diff <= r2 {
                            stack.push(l);
                        }
                    }
                }
            }
        }
    }
}

fn build_node(
    points: &Points,
    idx: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node { start, end, split_dim: 0, split: 0.0, children: None });
    if end - start <= leaf_size {
        return id;
    }
    let d = points.dim();
    let mut best = (0, -1.0);
    for k in 0..d {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &idx[start..end] {
            let v = points.row(i)[k];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best.1 {
            best = (k, hi - lo);
        }
    }
    let dim = best.0;
    let mid = (start + end) / 2;
    idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points.row(a)[dim].total_cmp(&points.row(b)[dim]).then(a.cmp(&b))
    });
    let split = points.row(idx[mid])[dim];
    // Points equal to the split value may sit on either side, so the split
    // plane is inclusive for both children during search.
    let l = build_node(points, idx, start, mid, leaf_size, nodes);
    let r = build_node(points, idx, mid, end, leaf_size, nodes);
    nodes[id].split_dim = dim;
    nodes[id].split = split;
    nodes[id].children = Some((l, r));
    id
}

#[derive(Clone, Copy, Debug)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

pub(crate) fn cmp_pair(a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}
