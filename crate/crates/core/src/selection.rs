//! Graph node selection: soft suppression of boxes that have a more
//! confident overlapping neighbor, then top-`N_g` selection.
//!
//! Every box reads only the *original* score array, so the suppression of
//! box `i` does not depend on the order in which other boxes are processed.
//! That makes the pass embarrassingly parallel with bit-identical output for
//! any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, BevBox3D};
use crate::tensor::Tensor;

/// Boxes, confidence scores and embeddings of a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuerySet")]
pub struct QuerySet {
    pub boxes: Vec<BevBox3D>,
    pub scores: Vec<f64>,
    pub embeddings: Tensor,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuerySet {
    boxes: Vec<BevBox3D>,
    scores: Vec<f64>,
    embeddings: Tensor,
}

impl TryFrom<RawQuerySet> for QuerySet {
    type Error = Error;

    fn try_from(r: RawQuerySet) -> Result<Self> {
        QuerySet::new(r.boxes, r.scores, r.embeddings)
    }
}

impl QuerySet {
    pub fn new(boxes: Vec<BevBox3D>, scores: Vec<f64>, embeddings: Tensor) -> Result<Self> {
        let n = boxes.len();
        if scores.len() != n || embeddings.shape().len() != 2 || embeddings.rows() != n {
            return Err(Error::Shape {
                op: "query_set",
                lhs: vec![n, scores.len()],
                rhs: embeddings.shape().to_vec(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("score {s} outside [0, 1]")));
        }
        Ok(Self {
            boxes,
            scores,
            embeddings,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            boxes: vec![],
            scores: vec![],
            embeddings: Tensor::zeros(&[0, dim]),
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            boxes: idx.iter().map(|&i| self.boxes[i]).collect(),
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            embeddings: self.embeddings.gather_rows(idx),
        }
    }
}

/// `j` is a neighbor of `i` iff `i != j` and `iou_bev(b_i, b_j) > theta`.
/// Lists are sorted by index.
pub fn neighbor_sets(boxes: &[BevBox3D], theta: f64) -> Vec<Vec<usize>> {
    let order = sweep_order(boxes);
    let r_max = boxes.iter().map(|b| b.bev_radius()).fold(0.0, f64::max);
    (0..boxes.len())
        .map(|i| neighbors_of(i, boxes, &order, r_max, theta))
        .collect()
}

fn sweep_order(boxes: &[BevBox3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].x().total_cmp(&boxes[b].x()).then(a.cmp(&b)));
    order
}

fn neighbors_of(i: usize, boxes: &[BevBox3D], order: &[usize], r_max: f64, theta: f64) -> Vec<usize> {
    let bi = &boxes[i];
    let reach = bi.bev_radius() + r_max;
    let lo = order.partition_point(|&k| boxes[k].x() < bi.x() - reach);
    let mut out: Vec<usize> = order[lo..]
        .iter()
        .take_while(|&&k| boxes[k].x() <= bi.x() + reach)
        .copied()
        .filter(|&j| j != i && iou_bev(bi, &boxes[j]) > theta)
        .collect();
    out.sort_unstable();
    out
}

fn suppress_one(i: usize, qs: &QuerySet, nb: &[usize]) -> f64 {
    let s_i = qs.scores[i];
    let Some(&m) = nb.iter().reduce(|best, j| {
        if qs.scores[*j] > qs.scores[*best] {
            j
        } else {
            best
        }
    }) else {
        return s_i;
    };
    if s_i >= qs.scores[m] {
        s_i
    } else {
        s_i * (1.0 - iou_bev(&qs.boxes[i], &qs.boxes[m]))
    }
}

/// Suppressed scores, one pass over the original scores.
pub fn suppress_scores(qs: &QuerySet, theta: f64) -> Vec<f64> {
    let nbs = neighbor_sets(&qs.boxes, theta);
    (0..qs.len()).map(|i| suppress_one(i, qs, &nbs[i])).collect()
}

/// [`suppress_scores`] evaluated on a dedicated pool of `workers` threads.
pub fn suppress_scores_parallel(qs: &QuerySet, theta: f64, workers: usize) -> Vec<f64> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let order = sweep_order(&qs.boxes);
    let r_max = qs.boxes.iter().map(|b| b.bev_radius()).fold(0.0, f64::max);
    pool.install(|| {
        (0..qs.len())
            .into_par_iter()
            .with_min_len(qs.len().div_ceil(workers.max(1)).max(1))
            .map(|i| {
                let nb = neighbors_of(i, &qs.boxes, &order, r_max, theta);
                suppress_one(i, qs, &nb)
            })
            .collect()
    })
}

/// Result of node selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected queries carrying their original scores.
    pub nodes: QuerySet,
    /// Suppressed scores used for ranking, aligned with `nodes`.
    pub ranking_scores: Vec<f64>,
    /// Positions of the selected queries in the input.
    pub indices: Vec<usize>,
}

/// Indices of the top `k` scores, ties broken by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn select_nodes(qs: &QuerySet, theta: f64, n_g: usize) -> Result<Selection> {
    if n_g == 0 {
        return Err(Error::Config("n_g must be at least 1".into()));
    }
    let updated = suppress_scores(qs, theta);
    let indices = top_k(&updated, n_g);
    Ok(Selection {
        nodes: qs.subset(&indices),
        ranking_scores: indices.iter().map(|&i| updated[i]).collect(),
        indices,
    })
}
