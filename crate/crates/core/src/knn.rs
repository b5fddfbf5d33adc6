//! k-nearest-neighbour differential entropy (Kozachenko-Leonenko).

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::random::stream_rng;

pub const MIN_KNN_SAMPLES: usize = 1000;
pub const DEFAULT_K: usize = 4;
const LEAF_SIZE: usize = 16;
const DUPLICATE_JITTER: f64 = 1e-12;

/// Points stored row-major, `dim` coordinates each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "{} coordinates do not split into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Invalid("ragged sample rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Static kd-tree over a `PointSet`; `order` permutes point indices so
/// each leaf owns a contiguous range.
pub struct KdTree<'a> {
    points: &'a PointSet,
    order: Vec<usize>,
    /// Coordinates copied in `order` so leaves are contiguous.
    packed: Vec<f64>,
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a PointSet) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = Self::build_node(points, &mut order, 0, n);
        let packed = order.iter().flat_map(|&i| points.point(i).iter().copied()).collect();
        Self { points, order, packed, root }
    }

    fn build_node(points: &PointSet, order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        // split the highest-variance coordinate at its median
        let dim = points.dim;
        let count = (end - start) as f64;
        let mut sum = vec![0.0; dim];
        let mut sum2 = vec![0.0; dim];
        for &i in &order[start..end] {
            for (d, &v) in points.point(i).iter().enumerate() {
                sum[d] += v;
                sum2[d] += v * v;
            }
        }
        let var: Vec<f64> = (0..dim).map(|d| sum2[d] / count - (sum[d] / count).powi(2)).collect();
        let axis = (0..dim).max_by(|&a, &b| var[a].total_cmp(&var[b])).unwrap();
        if var[axis] <= 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points.point(a)[axis].total_cmp(&points.point(b)[axis])
        });
        let split = start + mid;
        let value = points.point(order[split])[axis];
        let left = Box::new(Self::build_node(points, order, start, split));
        let right = Box::new(Self::build_node(points, order, split, end));
        Node::Split { axis, value, left, right }
    }

    /// Squared distance to the `k`-th nearest neighbour of point `query`
    /// (the point itself excluded).
    pub fn kth_neighbor_dist2(&self, query: usize, k: usize) -> f64 {
        let q = self.points.point(query);
        // sorted ascending, at most k entries
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let mut offsets = vec![0.0; self.points.dim];
        self.search(&self.root, q, query, k, &mut best, &mut offsets, 0.0);
        best.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `offsets` and `rd` carry the per-axis and total squared distance from
    /// `q` to the cell of `node` (incremental distance, Arya-Mount).
    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        node: &Node,
        q: &[f64],
        skip: usize,
        k: usize,
        best: &mut Vec<f64>,
        offsets: &mut [f64],
        rd: f64,
    ) {
        match node {
            Node::Leaf { start, end } => {
                let dim = self.points.dim;
                for slot in *start..*end {
                    if self.order[slot] == skip {
                        continue;
                    }
                    let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
                    let mut d2 = 0.0;
                    for (a, b) in self.packed[slot * dim..(slot + 1) * dim].iter().zip(q) {
                        d2 += (a - b) * (a - b);
                        if d2 >= bound {
                            break;
                        }
                    }
                    if d2 < bound {
                        let pos = best.partition_point(|&v| v <= d2);
                        best.insert(pos, d2);
                        best.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, k, best, offsets, rd);
                let old = offsets[*axis];
                let far_rd = rd - old * old + diff * diff;
                if best.len() < k || far_rd < best[k - 1] {
                    offsets[*axis] = diff;
                    self.search(far, q, skip, k, best, offsets, far_rd);
                    offsets[*axis] = old;
                }
            }
        }
    }
}

/// `ln` of the volume of the unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

fn knn_log_distances(points: &PointSet, k: usize) -> Vec<f64> {
    let tree = KdTree::build(points);
    // queries in leaf order keep consecutive searches on the same cells
    tree.order
        .par_iter()
        .map(|&i| 0.5 * tree.kth_neighbor_dist2(i, k).ln())
        .collect()
}

/// Differential entropy estimate in nats:
/// `psi(n) - psi(k) + ln V_d + (d/n) sum ln eps_i`.
pub fn entropy_knn(samples: &PointSet, k: usize) -> Result<f64> {
    let n = samples.len();
    if n < MIN_KNN_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_KNN_SAMPLES, got: n });
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter { field: "k", reason: format!("need 1 <= k < {n}, got {k}") });
    }
    if samples.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kNN sample coordinate".into()));
    }
    let mut logs = knn_log_distances(samples, k);
    if logs.iter().any(|v| !v.is_finite()) {
        let zeros = logs.iter().filter(|v| !v.is_finite()).count();
        log::warn!("{zeros} points have a zero k-NN distance; jittering all coordinates by {DUPLICATE_JITTER:e}");
        let mut rng = stream_rng(0x6a17, 0);
        let jittered = PointSet {
            dim: samples.dim,
            data: samples
                .data
                .iter()
                .map(|v| v + DUPLICATE_JITTER * (2.0 * rng.random::<f64>() - 1.0) * v.abs().max(1.0))
                .collect(),
        };
        logs = knn_log_distances(&jittered, k);
        if logs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("k-NN distance after jitter".into()));
        }
    }
    let d = samples.dim as f64;
    let nf = n as f64;
    let sum: f64 = logs.iter().sum();
    Ok(digamma(nf) - digamma(k as f64) + log_unit_ball_volume(samples.dim) + d * sum / nf)
}
