//! Set-prediction loss: sigmoid focal classification, Huber box regression,
//! 3D GIoU, and the confidence-weighted pairwise IoU regularizer.
//!
//! Classification and Huber gradients are analytic. Gradients of the
//! IoU-based terms w.r.t. the seven box parameters use central differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_distance_bev, giou_3d, BevBox3D, IouKind};
use crate::matching::Assignment;
use crate::tape::sigmoid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_h: f64,
    pub lambda_giou: f64,
    pub lambda_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_h: 4.0,
            lambda_giou: 2.0,
            lambda_r: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_cls, self.lambda_h, self.lambda_giou, self.lambda_r];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub huber_delta: f64,
    /// Overlap measure inside the regularizer.
    pub reg_iou: IouKind,
    /// Central-difference step for IoU-based box gradients (m / rad).
    pub fd_step: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            huber_delta: 1.0,
            reg_iou: IouKind::Bev,
            fd_step: 1e-4,
        }
    }
}

/// Boxes and per-class logits of a prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub boxes: Vec<BevBox3D>,
    /// `[n, num_classes]` logits; probabilities are their sigmoids.
    pub logits: Tensor,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn probs(&self) -> Tensor {
        self.logits.map(sigmoid)
    }

    /// Confidence of each prediction: its largest class probability.
    pub fn scores(&self) -> Vec<f64> {
        let k = self.logits.cols();
        (0..self.len())
            .map(|i| {
                self.logits.row(i)[..k]
                    .iter()
                    .map(|&z| sigmoid(z))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn best_class(&self, i: usize) -> usize {
        let row = self.logits.row(i);
        let mut best = 0;
        for (k, &z) in row.iter().enumerate() {
            if z > row[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<BevBox3D>,
    pub classes: Vec<usize>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

/// L1 distance between regression vectors `(x, y, z, l, w, h, sin, cos)`.
pub fn l1_box_distance(a: &BevBox3D, b: &BevBox3D) -> f64 {
    a.regression_params()
        .iter()
        .zip(b.regression_params())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Matching cost `[n_pred, n_gt]`:
/// `-lambda_cls p_i[c_k] + lambda_h |b_i - g_k|_1 + lambda_giou (1 - giou)`.
pub fn match_cost(pred: &Predictions, gt: &GroundTruth, w: &LossWeights) -> Tensor {
    let probs = pred.probs();
    let (n, m) = (pred.len(), gt.len());
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        for k in 0..m {
            let cls = -probs.at(i, gt.classes[k]);
            let l1 = l1_box_distance(&pred.boxes[i], &gt.boxes[k]);
            let giou = 1.0 - giou_3d(&pred.boxes[i], &gt.boxes[k]);
            data.push(w.lambda_cls * cls + w.lambda_h * l1 + w.lambda_giou * giou);
        }
    }
    Tensor::new(vec![n, m], data).expect("shape")
}

/// Summed sigmoid focal loss over probabilities `p` with binary targets.
pub fn focal_loss(p: &[f64], targets: &[f64], alpha: f64, gamma: f64) -> f64 {
    p.iter()
        .zip(targets)
        .map(|(&p, &t)| {
            if t > 0.5 {
                -alpha * (1.0 - p).powf(gamma) * p.ln()
            } else {
                -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
            }
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Focal loss of one logit and its derivative w.r.t. the logit.
pub fn focal_from_logit(z: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(z);
    if positive {
        let log_p = -softplus(-z);
        let q = 1.0 - p;
        let v = -alpha * q.powf(gamma) * log_p;
        let d = alpha * q.powf(gamma) * (gamma * p * log_p - q);
        (v, d)
    } else {
        let log_q = -softplus(z);
        let v = -(1.0 - alpha) * p.powf(gamma) * log_q;
        let d = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q);
        (v, d)
    }
}

fn may_overlap(a: &BevBox3D, b: &BevBox3D, margin: f64) -> bool {
    center_distance_bev(a, b) < a.bev_radius() + b.bev_radius() + margin
}

/// `sum_i sum_{j != i} s_i IoU(b_i, b_j)`.
pub fn iou_regularizer(boxes: &[BevBox3D], scores: &[f64], kind: IouKind) -> f64 {
    let mut r = 0.0;
    for i in 0..boxes.len() {
        for j in 0..boxes.len() {
            if i != j && may_overlap(&boxes[i], &boxes[j], 0.0) {
                r += scores[i] * kind.iou(&boxes[i], &boxes[j]);
            }
        }
    }
    r
}

/// Gradient of the regularizer: `(d/d scores, d/d box params)`.
pub fn iou_regularizer_grad(
    boxes: &[BevBox3D],
    scores: &[f64],
    kind: IouKind,
    step: f64,
) -> (Vec<f64>, Vec<[f64; 7]>) {
    let n = boxes.len();
    let margin = 10.0 * step;
    let mut ds = vec![0.0; n];
    let mut db = vec![[0.0; 7]; n];
    for i in 0..n {
        let partners: Vec<usize> = (0..n)
            .filter(|&j| j != i && may_overlap(&boxes[i], &boxes[j], margin))
            .collect();
        if partners.is_empty() {
            continue;
        }
        ds[i] = partners.iter().map(|&j| kind.iou(&boxes[i], &boxes[j])).sum();
        // both orderings of the pair involve box i
        let local = |b: &BevBox3D| -> f64 {
            partners
                .iter()
                .map(|&j| (scores[i] + scores[j]) * kind.iou(b, &boxes[j]))
                .sum()
        };
        db[i] = central_difference(&boxes[i], step, local);
    }
    (ds, db)
}

/// Central differences of `f` w.r.t. the seven box parameters.
pub fn central_difference(b: &BevBox3D, step: f64, f: impl Fn(&BevBox3D) -> f64) -> [f64; 7] {
    let base = b.to_array();
    let mut g = [0.0; 7];
    for (p, gp) in g.iter_mut().enumerate() {
        let mut hi = base;
        let mut lo = base;
        hi[p] += step;
        lo[p] -= step;
        let (Ok(bh), Ok(bl)) = (BevBox3D::from_array(hi), BevBox3D::from_array(lo)) else {
            continue;
        };
        *gp = (f(&bh) - f(&bl)) / (2.0 * step);
    }
    g
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_cls")]
    pub cls: f64,
    #[serde(rename = "L_huber")]
    pub huber: f64,
    #[serde(rename = "L_giou")]
    pub giou: f64,
    #[serde(rename = "R_b")]
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// `d total / d logits`, `[n, num_classes]`.
    pub grad_logits: Tensor,
    /// `d total / d (x, y, z, l, w, h, heading)` per prediction.
    pub grad_boxes: Vec<[f64; 7]>,
}

/// Huber loss over the regression vector and its gradient w.r.t. the
/// seven box parameters.
pub fn huber_box(pred: &BevBox3D, gt: &BevBox3D, delta: f64) -> (f64, [f64; 7]) {
    let p = pred.regression_params();
    let g = gt.regression_params();
    let mut value = 0.0;
    let mut dr = [0.0; 8];
    for k in 0..8 {
        let r = p[k] - g[k];
        value += huber(r, delta);
        dr[k] = huber_grad(r, delta);
    }
    let (s, c) = pred.heading().sin_cos();
    let mut grad = [0.0; 7];
    grad[..6].copy_from_slice(&dr[..6]);
    grad[6] = dr[6] * c - dr[7] * s;
    (value, grad)
}

/// Full loss for one prediction head under a fixed assignment.
pub fn total_loss(
    pred: &Predictions,
    gt: &GroundTruth,
    assignment: &Assignment,
    cfg: &LossConfig,
) -> LossOutput {
    let n = pred.len();
    let k = pred.logits.cols();
    let w = &cfg.weights;
    let norm = gt.len().max(1) as f64;
    let gt_of = assignment.gt_of(n);

    let mut cls = 0.0;
    let mut grad_logits = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for c in 0..k {
            let positive = gt_of[i].is_some_and(|g| gt.classes[g] == c);
            let (v, d) = focal_from_logit(pred.logits.at(i, c), positive, cfg.focal_alpha, cfg.focal_gamma);
            cls += v;
            grad_logits.data_mut()[i * k + c] = w.lambda_cls * d / norm;
        }
    }
    cls /= norm;

    let mut grad_boxes = vec![[0.0; 7]; n];
    let mut hub = 0.0;
    let mut giou = 0.0;
    for &(i, g) in &assignment.pairs {
        let (hv, hg) = huber_box(&pred.boxes[i], &gt.boxes[g], cfg.huber_delta);
        hub += hv;
        let target = gt.boxes[g];
        giou += 1.0 - giou_3d(&pred.boxes[i], &target);
        let gg = if w.lambda_giou > 0.0 {
            central_difference(&pred.boxes[i], cfg.fd_step, |b| 1.0 - giou_3d(b, &target))
        } else {
            [0.0; 7]
        };
        for p in 0..7 {
            grad_boxes[i][p] += (w.lambda_h * hg[p] + w.lambda_giou * gg[p]) / norm;
        }
    }
    hub /= norm;
    giou /= norm;

    let scores = pred.scores();
    let reg = iou_regularizer(&pred.boxes, &scores, cfg.reg_iou);
    if w.lambda_r > 0.0 && n > 1 {
        let (ds, db) = iou_regularizer_grad(&pred.boxes, &scores, cfg.reg_iou, cfg.fd_step);
        for i in 0..n {
            for p in 0..7 {
                grad_boxes[i][p] += w.lambda_r * db[i][p];
            }
            if ds[i] != 0.0 {
                let c = pred.best_class(i);
                let s = scores[i];
                grad_logits.data_mut()[i * k + c] += w.lambda_r * ds[i] * s * (1.0 - s);
            }
        }
    }

    let total = w.lambda_cls * cls + w.lambda_h * hub + w.lambda_giou * giou + w.lambda_r * reg;
    LossOutput {
        breakdown: LossBreakdown {
            cls,
            huber: hub,
            giou,
            reg,
            total,
        },
        grad_logits,
        grad_boxes,
    }
}
