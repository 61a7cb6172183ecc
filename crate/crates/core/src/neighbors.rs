//! Exact k-nearest-neighbour search with temporal (Theiler) exclusion.
//!
//! Candidates are ranked by the key `(squared distance, index)`, so ties go to
//! the smaller index and the kd-tree returns exactly what a full scan would.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, RowMatrix};
use crate::stats::quantile;

/// Below this many points a linear scan is used instead of the tree.
pub const BRUTE_FORCE_BELOW: usize = 2000;
const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborConfig {
    pub k: usize,
    pub theiler_w: usize,
    /// Largest row index a neighbour may have. `None` allows every row.
    pub candidate_limit: Option<usize>,
}

impl NeighborConfig {
    pub fn new(k: usize, theiler_w: usize) -> Self {
        Self {
            k,
            theiler_w,
            candidate_limit: None,
        }
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.candidate_limit = Some(limit);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn admissible(&self, q: usize, t: usize) -> bool {
        t.abs_diff(q) > self.theiler_w && self.candidate_limit.map_or(true, |l| t <= l)
    }

    /// Number of admissible candidates for query row `q` among `n` rows.
    pub fn admissible_count(&self, q: usize, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let hi = self.candidate_limit.map_or(n - 1, |l| l.min(n - 1));
        let total = hi + 1;
        let band_lo = q.saturating_sub(self.theiler_w);
        let band_hi = q.saturating_add(self.theiler_w).min(hi);
        let banned = if band_lo > hi { 0 } else { band_hi - band_lo + 1 };
        total - banned
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    d2: f64,
    idx: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.d2.total_cmp(&o.d2).then(self.idx.cmp(&o.idx))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static search structure over a point set. Optional `ids` relabel rows
/// (used when indexing a subset of a larger series).
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: RowMatrix,
    ids: Option<Vec<usize>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn new(points: &RowMatrix) -> Self {
        Self::build(points.clone(), None, points.rows() < BRUTE_FORCE_BELOW)
    }

    /// Index the rows `ids` of `points`; results report the original row ids.
    pub fn from_subset(points: &RowMatrix, ids: &[usize]) -> Self {
        let sub = points.select_rows(ids);
        let brute = sub.rows() < BRUTE_FORCE_BELOW;
        Self::build(sub, Some(ids.to_vec()), brute)
    }

    /// Force a linear scan regardless of size.
    pub fn brute_force(points: &RowMatrix) -> Self {
        Self::build(points.clone(), None, true)
    }

    /// Force the kd-tree regardless of size.
    pub fn kd_tree(points: &RowMatrix) -> Self {
        Self::build(points.clone(), None, false)
    }

    fn build(points: RowMatrix, ids: Option<Vec<usize>>, brute: bool) -> Self {
        let n = points.rows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if !brute && n > 0 {
            build_node(&points, &mut order, 0, n, &mut nodes);
        }
        Self {
            points,
            ids,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    fn id(&self, local: usize) -> usize {
        self.ids.as_ref().map_or(local, |v| v[local])
    }

    /// The `k` nearest rows to `point` among those whose id passes `keep`,
    /// sorted by ascending distance, ties by smaller id. May return fewer than
    /// `k` when not enough rows pass.
    pub fn knn_filtered<F: Fn(usize) -> bool>(&self, point: &[f64], k: usize, keep: F) -> Vec<Neighbor> {
        let mut heap: BinaryHeap<Key> = BinaryHeap::with_capacity(k + 1);
        if k == 0 {
            return Vec::new();
        }
        let offer = |local: usize, heap: &mut BinaryHeap<Key>| {
            let id = self.id(local);
            if !keep(id) {
                return;
            }
            let key = Key {
                d2: sq_dist(point, self.points.row(local)),
                idx: id,
            };
            if heap.len() < k {
                heap.push(key);
            } else if key < *heap.peek().unwrap() {
                heap.pop();
                heap.push(key);
            }
        };
        if self.nodes.is_empty() {
            for local in 0..self.points.rows() {
                offer(local, &mut heap);
            }
        } else {
            let mut stack: Vec<(usize, f64)> = vec![(0, 0.0)];
            while let Some((node, plane2)) = stack.pop() {
                if heap.len() == k && plane2 > heap.peek().unwrap().d2 {
                    continue;
                }
                match self.nodes[node] {
                    Node::Leaf { start, end } => {
                        for &local in &self.order[start..end] {
                            offer(local, &mut heap);
                        }
                    }
                    Node::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = point[dim] - value;
                        let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                        // Lower bound on the squared distance to anything across the plane.
                        let far_bound = plane2.max(diff * diff);
                        stack.push((far, far_bound));
                        stack.push((near, plane2));
                    }
                }
            }
        }
        let mut keys = heap.into_vec();
        keys.sort();
        keys.into_iter()
            .map(|k| Neighbor {
                index: k.idx,
                dist: k.d2.sqrt(),
            })
            .collect()
    }

    /// Neighbours of row `q` subject to the Theiler window and candidate limit.
    pub fn knn_theiler(&self, q: usize, cfg: &NeighborConfig) -> Result<Vec<Neighbor>> {
        cfg.validate()?;
        if self.ids.is_some() {
            return Err(Error::InvalidParameter(
                "knn_theiler needs a full (not subset) index".into(),
            ));
        }
        let n = self.points.rows();
        if q >= n {
            return Err(Error::InvalidParameter(format!("query {q} out of range ({n} rows)")));
        }
        let available = cfg.admissible_count(q, n);
        if available < cfg.k {
            return Err(Error::InsufficientCandidates {
                query: q,
                needed: cfg.k,
                available,
            });
        }
        let out = self.knn_filtered(self.points.row(q), cfg.k, |t| cfg.admissible(q, t));
        debug_assert_eq!(out.len(), cfg.k);
        Ok(out)
    }
}

fn build_node(points: &RowMatrix, order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let width = points.width();
    let mut best_dim = 0;
    let mut best_spread = -1.0;
    for d in 0..width {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &order[start..end] {
            let v = points.row(i)[d];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = d;
        }
    }
    if best_spread <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points.row(a)[best_dim].total_cmp(&points.row(b)[best_dim])
    });
    let value = points.row(order[mid])[best_dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // Left holds order[start..mid] (all <= value), right order[mid..end] (all >= value).
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    nodes[id] = Node::Split {
        dim: best_dim,
        value,
        left,
        right,
    };
    id
}

pub fn knn_theiler(states: &RowMatrix, q: usize, cfg: &NeighborConfig) -> Result<Vec<Neighbor>> {
    NeighborIndex::new(states).knn_theiler(q, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusStats {
    pub r_k_median: f64,
    pub r_k_q90: f64,
}

/// Median and 0.9-quantile of the k-th neighbour distance over `queries`.
pub fn radius_stats(index: &NeighborIndex, queries: &[usize], cfg: &NeighborConfig) -> Result<(RadiusStats, Vec<f64>)> {
    let radii: Vec<f64> = queries
        .iter()
        .map(|&q| index.knn_theiler(q, cfg).map(|nb| nb.last().map_or(0.0, |n| n.dist)))
        .collect::<Result<_>>()?;
    if radii.is_empty() {
        return Err(Error::InsufficientData("no queries".into()));
    }
    Ok((
        RadiusStats {
            r_k_median: quantile(&radii, 0.5),
            r_k_q90: quantile(&radii, 0.9),
        },
        radii,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(v: &[f64]) -> RowMatrix {
        RowMatrix::from_column(v)
    }

    fn oracle(points: &RowMatrix, q: usize, cfg: &NeighborConfig) -> Vec<usize> {
        let mut cand: Vec<(f64, usize)> = (0..points.rows())
            .filter(|&t| cfg.admissible(q, t))
            .map(|t| (sq_dist(points.row(q), points.row(t)), t))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.into_iter().take(cfg.k).map(|c| c.1).collect()
    }

    #[test]
    fn small_examples() {
        let p = line(&[0.0, 1.0, 2.0, 3.0, 10.0]);
        let idx = |v: Vec<Neighbor>| v.into_iter().map(|n| n.index).collect::<Vec<_>>();
        assert_eq!(idx(knn_theiler(&p, 0, &NeighborConfig::new(2, 0)).unwrap()), vec![1, 2]);
        assert_eq!(idx(knn_theiler(&p, 0, &NeighborConfig::new(2, 2)).unwrap()), vec![3, 4]);
        match knn_theiler(&p, 0, &NeighborConfig::new(3, 2)) {
            Err(Error::InsufficientCandidates {
                needed: 3,
                available: 2,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ties_prefer_smaller_index() {
        let p = line(&[0.0, 1.0, -1.0, 1.0, -1.0]);
        let nb = knn_theiler(&p, 0, &NeighborConfig::new(2, 0)).unwrap();
        assert_eq!(nb.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(n, m) in &[(3000usize, 3usize), (2500, 5), (4000, 1)] {
            let mut pts = RowMatrix::new(m);
            for _ in 0..n {
                // Quantised coordinates force many exact ties.
                let row: Vec<f64> = (0..m).map(|_| (rng.gen_range(0..40) as f64) * 0.25).collect();
                pts.push_row(&row).unwrap();
            }
            let tree = NeighborIndex::kd_tree(&pts);
            let brute = NeighborIndex::brute_force(&pts);
            let cfg = NeighborConfig::new(25, 7).with_limit(n - 30);
            for _ in 0..200 {
                let q = rng.gen_range(0..n);
                let a = tree.knn_theiler(q, &cfg).unwrap();
                let b = brute.knn_theiler(q, &cfg).unwrap();
                assert_eq!(a, b);
                assert_eq!(a.iter().map(|x| x.index).collect::<Vec<_>>(), oracle(&pts, q, &cfg));
                for nb in &a {
                    assert!(nb.index.abs_diff(q) > 7 && nb.index <= n - 30);
                }
            }
        }
    }

    #[test]
    fn subset_index_reports_original_ids() {
        let p = line(&[0.0, 5.0, 1.0, 6.0, 2.0]);
        let ix = NeighborIndex::from_subset(&p, &[0, 2, 4]);
        let nb = ix.knn_filtered(&[1.9], 2, |_| true);
        assert_eq!(nb.iter().map(|n| n.index).collect::<Vec<_>>(), vec![4, 2]);
    }

    #[test]
    fn radius_of_identical_states_is_zero() {
        let p = RowMatrix::from_rows(&vec![[1.0, 1.0]; 100]).unwrap();
        let ix = NeighborIndex::new(&p);
        let (r, _) = radius_stats(&ix, &[0, 10, 50, 99], &NeighborConfig::new(5, 3)).unwrap();
        assert_eq!(r.r_k_median, 0.0);
        assert_eq!(r.r_k_q90, 0.0);
    }

    #[test]
    fn admissible_count_matches_enumeration() {
        for n in [1usize, 5, 30] {
            for w in [0usize, 1, 4, 40] {
                for lim in [None, Some(0), Some(3), Some(20)] {
                    let cfg = NeighborConfig {
                        k: 1,
                        theiler_w: w,
                        candidate_limit: lim,
                    };
                    for q in 0..n {
                        let brute = (0..n).filter(|&t| cfg.admissible(q, t)).count();
                        assert_eq!(cfg.admissible_count(q, n), brute, "n={n} w={w} lim={lim:?} q={q}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn kth_radius_non_decreasing_in_k(seed in 0u64..1000, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<[f64; 2]> = (0..200).map(|_| [rng.gen(), rng.gen()]).collect();
            let pts = RowMatrix::from_rows(&rows).unwrap();
            let ix = NeighborIndex::new(&pts);
            let q = (seed as usize) % 200;
            let a = ix.knn_theiler(q, &NeighborConfig::new(k, 3)).unwrap();
            let b = ix.knn_theiler(q, &NeighborConfig::new(k + 1, 3)).unwrap();
            prop_assert!(a.last().unwrap().dist <= b.last().unwrap().dist);
            prop_assert!(a.windows(2).all(|w| w[0].dist <= w[1].dist));
        }
    }
}
