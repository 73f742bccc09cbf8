//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stgraph::geometry::iou_bev;
use stgraph::{BevBox3D, Tensor};

/// Minimum total cost over every injective map from ground truths
/// (columns) to predictions (rows), summed in ground-truth order.
pub fn brute_force_min_cost(cost: &Tensor) -> f64 {
    fn go(cost: &Tensor, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if g == cost.cols() {
            *best = best.min(acc);
            return;
        }
        for p in 0..cost.rows() {
            if !used[p] {
                used[p] = true;
                go(cost, g + 1, used, acc + cost.at(p, g), best);
                used[p] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

fn corners(b: &BevBox3D) -> [[f64; 2]; 4] {
    let (s, c) = b.heading().sin_cos();
    let (hl, hw) = (b.l() / 2.0, b.w() / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| [b.x() + c * u - s * v, b.y() + s * u + c * v])
}

/// x-extent of a convex quadrilateral on the horizontal line `y`.
fn span_at(q: &[[f64; 2]; 4], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..4 {
        let (p, r) = (q[k], q[(k + 1) % 4]);
        if (p[1] - y) * (r[1] - y) <= 0.0 && p[1] != r[1] {
            let x = p[0] + (y - p[1]) / (r[1] - p[1]) * (r[0] - p[0]);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// BEV IoU by scanline rasterization: the overlap width of the two
/// footprints is sampled at `rows` row midpoints.
pub fn raster_iou_bev(a: &BevBox3D, b: &BevBox3D, rows: usize) -> f64 {
    let (qa, qb) = (corners(a), corners(b));
    let ys = |q: &[[f64; 2]; 4]| {
        q.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[1]), h.max(p[1])))
    };
    let (la, ha) = ys(&qa);
    let (lb, hb) = ys(&qb);
    let (y0, y1) = (la.max(lb), ha.min(hb));
    let mut inter = 0.0;
    if y1 > y0 {
        let dy = (y1 - y0) / rows as f64;
        for r in 0..rows {
            let y = y0 + (r as f64 + 0.5) * dy;
            if let (Some((a0, a1)), Some((b0, b1))) = (span_at(&qa, y), span_at(&qb, y)) {
                inter += (a1.min(b1) - a0.max(b0)).max(0.0) * dy;
            }
        }
    }
    let union = a.l() * a.w() + b.l() * b.w() - inter;
    inter / union
}

/// Single-pass suppression straight from the definition.
pub fn oracle_suppress(boxes: &[BevBox3D], scores: &[f64], theta: f64) -> Vec<f64> {
    let n = boxes.len();
    (0..n)
        .map(|i| {
            let mut m: Option<usize> = None;
            for j in 0..n {
                if j != i && iou_bev(&boxes[i], &boxes[j]) > theta && m.is_none_or(|m| scores[j] > scores[m]) {
                    m = Some(j);
                }
            }
            match m {
                Some(m) if scores[i] < scores[m] => scores[i] * (1.0 - iou_bev(&boxes[i], &boxes[m])),
                _ => scores[i],
            }
        })
        .collect()
}

/// Indices of the `k` largest values, ties to the lower index.
pub fn oracle_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut taken = vec![false; scores.len()];
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

pub fn random_box(rng: &mut ChaCha8Rng, spread: f64) -> BevBox3D {
    BevBox3D::new(
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.5..5.0),
        rng.random_range(0.5..2.5),
        rng.random_range(0.5..2.0),
        rng.random_range(-3.2..3.2),
    )
    .unwrap()
}

/// Overlapping clusters: `n` boxes jittered around `n / 4` centers.
pub fn clustered_boxes(rng: &mut ChaCha8Rng, n: usize) -> (Vec<BevBox3D>, Vec<f64>) {
    let centers: Vec<BevBox3D> = (0..(n / 4).max(1)).map(|_| random_box(rng, 25.0)).collect();
    let boxes = (0..n)
        .map(|k| {
            let c = centers[k % centers.len()];
            BevBox3D::new(
                c.x() + rng.random_range(-0.5..0.5),
                c.y() + rng.random_range(-0.5..0.5),
                c.z(),
                c.l() * rng.random_range(0.9..1.1),
                c.w() * rng.random_range(0.9..1.1),
                c.h(),
                c.heading() + rng.random_range(-0.15..0.15),
            )
            .unwrap()
        })
        .collect();
    let scores = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    (boxes, scores)
}
