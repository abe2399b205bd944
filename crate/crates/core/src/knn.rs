//! Exact k-nearest-neighbor search over 3D points.
//!
//! A kd-tree with results defined to match a brute-force scan exactly:
//! neighbors are ordered by (squared distance, lexicographic point,
//! insertion index), and pruning never cuts off a tied candidate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::Voxel;
use crate::error::{Error, Result};

/// One query result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Index of the point in the slice the index was built from.
    pub index: usize,
    pub point: [f64; 3],
    pub dist_sq: f64,
}

#[derive(Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Spatial index supporting exact kNN under squared Euclidean distance.
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
    root: i32,
}

const NO_EXCLUDE: usize = usize::MAX;

impl NeighborIndex {
    /// Build an index over the given points. Input order is preserved in
    /// the `index` field of query results.
    pub fn build(points: Vec<[f64; 3]>) -> NeighborIndex {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(&points, &mut order, &mut nodes);
        NeighborIndex {
            points,
            nodes,
            root,
        }
    }

    pub fn from_voxels(points: &[Voxel]) -> NeighborIndex {
        NeighborIndex::build(points.iter().map(|v| v.as_f64()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 3] {
        self.points[index]
    }

    /// The k nearest points to `query` (fewer if the index is smaller),
    /// ordered by (distance, lexicographic point).
    pub fn knn(&self, query: [f64; 3], k: usize) -> Result<Vec<Neighbor>> {
        self.knn_impl(query, k, NO_EXCLUDE)
    }

    /// Like [`knn`](Self::knn) but skipping one entry, identified by its
    /// build index. Used when the query point itself is in the index: only
    /// that entry is excluded, never a co-located twin.
    pub fn knn_excluding(
        &self,
        query: [f64; 3],
        k: usize,
        exclude: usize,
    ) -> Result<Vec<Neighbor>> {
        self.knn_impl(query, k, exclude)
    }

    fn knn_impl(&self, query: [f64; 3], k: usize, exclude: usize) -> Result<Vec<Neighbor>> {
        assert!(k >= 1, "knn requires k >= 1");
        if self.points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| Neighbor {
                index: e.index,
                point: e.point,
                dist_sq: e.dist_sq,
            })
            .collect();
        out.truncate(k);
        Ok(out)
    }

    fn search(
        &self,
        node: i32,
        query: [f64; 3],
        k: usize,
        exclude: usize,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        if node < 0 {
            return;
        }
        let n = self.nodes[node as usize];
        let p = self.points[n.point as usize];

        if n.point as usize != exclude {
            let d2 = dist_sq(p, query);
            let entry = HeapEntry {
                dist_sq: d2,
                point: p,
                index: n.point as usize,
            };
            if heap.len() < k {
                heap.push(entry);
            } else if entry < *heap.peek().expect("non-empty heap") {
                heap.push(entry);
                heap.pop();
            }
        }

        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, query, k, exclude, heap);
        // A far-side point at exactly the current worst distance can still
        // win on the lexicographic tie-break, so prune on > only.
        let must_visit =
            heap.len() < k || delta * delta <= heap.peek().expect("non-empty heap").dist_sq;
        if must_visit {
            self.search(far, query, k, exclude, heap);
        }
    }
}

fn build_rec(points: &[[f64; 3]], order: &mut [u32], nodes: &mut Vec<Node>) -> i32 {
    if order.is_empty() {
        return -1;
    }
    // Split on the axis with the largest spread (ties to the lowest axis).
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = points[i as usize];
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if max[a] - min[a] > max[axis] - min[axis] {
            axis = a;
        }
    }

    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let pa = points[a as usize];
        let pb = points[b as usize];
        pa[axis]
            .total_cmp(&pb[axis])
            .then_with(|| cmp_point(pa, pb))
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let slot = nodes.len();
    nodes.push(Node {
        point,
        axis: axis as u8,
        left: -1,
        right: -1,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(points, lo, nodes);
    let right = build_rec(points, hi, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as i32
}

fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Lexicographic point comparison.
pub fn cmp_point(a: [f64; 3], b: [f64; 3]) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist_sq: f64,
    point: [f64; 3],
    index: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then_with(|| cmp_point(self.point, other.point))
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reference implementation: full scan, sort, take k. Query results of
/// [`NeighborIndex`] must be identical to this on any input.
pub fn brute_force_knn(
    points: &[[f64; 3]],
    query: [f64; 3],
    k: usize,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, &p)| Neighbor {
            index: i,
            point: p,
            dist_sq: dist_sq(p, query),
        })
        .collect();
    all.sort_by(|a, b| {
        a.dist_sq
            .total_cmp(&b.dist_sq)
            .then_with(|| cmp_point(a.point, b.point))
            .then(a.index.cmp(&b.index))
    });
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_nearest() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let index = NeighborIndex::build(pts);
        let hits = index.knn_excluding([0.0, 0.0, 0.0], 1, 0).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].point, [1.0, 0.0, 0.0]);
        assert_eq!(hits[0].dist_sq, 1.0);
    }

    #[test]
    fn coincident_query_without_exclusion() {
        let index = NeighborIndex::build(vec![[2.0, 2.0, 2.0]]);
        let hits = index.knn([2.0, 2.0, 2.0], 1).unwrap();
        assert_eq!(hits[0].dist_sq, 0.0);
    }

    #[test]
    fn empty_index_is_an_error() {
        let index = NeighborIndex::build(Vec::new());
        assert!(matches!(index.knn([0.0; 3], 1), Err(Error::EmptyIndex)));
    }

    #[test]
    fn ties_break_lexicographically() {
        // Four points at distance 1 from the origin.
        let pts = vec![
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0],
        ];
        let index = NeighborIndex::build(pts);
        let hits = index.knn([0.0, 0.0, 0.0], 3).unwrap();
        let got: Vec<[f64; 3]> = hits.iter().map(|n| n.point).collect();
        assert_eq!(
            got,
            vec![[0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn returns_fewer_when_index_is_small() {
        let index = NeighborIndex::build(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let hits = index.knn([0.0; 3], 10).unwrap();
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..300);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0..12) as f64,
                        rng.gen_range(0..12) as f64,
                        rng.gen_range(0..12) as f64,
                    ]
                })
                .collect();
            let index = NeighborIndex::build(pts.clone());
            for _ in 0..10 {
                let q = [
                    rng.gen_range(0..12) as f64,
                    rng.gen_range(0..12) as f64,
                    rng.gen_range(0..12) as f64,
                ];
                let k = rng.gen_range(1..=8);
                let got = index.knn(q, k).unwrap();
                let want = brute_force_knn(&pts, q, k, None);
                assert_eq!(got, want);
            }
        }
    }
}
