use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SpatialIndex;
use crate::points::{sq_dist, Points};

/// A permutation of `0..n`: `perm[k]` is the point placed at position `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaximinOrder {
    pub perm: Vec<usize>,
}

impl MaximinOrder {
    /// `pos[i]` is the position of point `i`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.perm.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            pos[i] = k;
        }
        pos
    }
}

/// Exact greedy maximin ordering. The first point is the one farthest from
/// the centroid; each next point maximizes its minimum distance to the points
/// already placed. Ties go to the lowest index.
pub fn maximin_order(x: &Points) -> MaximinOrder {
    let n = x.len();
    if n <= 1 {
        return MaximinOrder { perm: (0..n).collect() };
    }
    let c = x.centroid();
    let mut first = 0;
    let mut far = -1.0;
    for i in 0..n {
        let d2 = sq_dist(x.row(i), &c);
        if d2 > far {
            far = d2;
            first = i;
        }
    }
    let index = SpatialIndex::build(x);
    let mut dist: Vec<f64> = (0..n).map(|j| sq_dist(x.row(first), x.row(j))).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut heap: BinaryHeap<Entry> = (0..n).filter(|&j| j != first).map(|j| Entry { d2: dist[j], idx: j }).collect();
    let mut perm = Vec::with_capacity(n);
    perm.push(first);
    while let Some(e) = heap.pop() {
        if chosen[e.idx] || e.d2 != dist[e.idx] {
            continue;
        }
        let i = e.idx;
        chosen[i] = true;
        perm.push(i);
        let xi = x.row(i);
        let mut updates = Vec::new();
        index.for_each_within(xi, e.d2, |j, d2| {
            if !chosen[j] && d2 < dist[j] {
                updates.push((j, d2));
            }
        });
        for (j, d2) in updates {
            dist[j] = d2;
            heap.push(Entry { d2, idx: j });
        }
    }
    MaximinOrder { perm }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    d2: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Max-heap on distance, then on lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(other.idx.cmp(&self.idx))
    }
}
