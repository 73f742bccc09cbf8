//! Graph head: a three-layer feed-forward map from graph embeddings to box
//! deltas and class logits.
//!
//! Output row layout: `[dx, dy, dz, dl, dw, dh, dheading, logit_0..logit_K]`.
//! Deltas are applied to the node box as `x + dx`, `l * exp(dl)` and so on;
//! class logits are added to `logit(s)` of the node score. The last layer
//! starts at zero, so an untrained head reproduces its input nodes.

use crate::error::Result;
use crate::geometry::BevBox3D;
use crate::loss::{LossOutput, Predictions};
use crate::nn::linear;
use crate::params::{Bound, Init, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
pub const BOX_DELTAS: usize = 7;
pub const HEAD_OUT: usize = BOX_DELTAS + NUM_CLASSES;

/// Log-size deltas are clamped to this magnitude when decoding.
pub const MAX_LOG_SCALE: f64 = 4.0;
const SCORE_EPS: f64 = 1e-4;

/// `{p}.w1, {p}.b1, {p}.w2, {p}.b2` (`c -> c -> c`) and a zeroed
/// `{p}.w3 [c, 10], {p}.b3 [10]`.
pub fn init_head(init: &mut Init, prefix: &str, c: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(format!("{prefix}.w1"), init.weight(c, c)).expect("fresh");
    p.insert(format!("{prefix}.b1"), init.uniform(&[c], c)).expect("fresh");
    p.insert(format!("{prefix}.w2"), init.weight(c, c)).expect("fresh");
    p.insert(format!("{prefix}.b2"), init.uniform(&[c], c)).expect("fresh");
    p.insert(format!("{prefix}.w3"), Tensor::zeros(&[c, HEAD_OUT]))
        .expect("fresh");
    p.insert(format!("{prefix}.b3"), Tensor::zeros(&[HEAD_OUT]))
        .expect("fresh");
    p
}

/// Raw head output `[n, 10]`.
pub fn head_forward<'t>(x: Var<'t>, params: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    let g = |n: &str| params.get(&format!("{prefix}.{n}"));
    let h = linear(x, g("w1")?, Some(g("b1")?))?.elu();
    let h = linear(h, g("w2")?, Some(g("b2")?))?.elu();
    linear(h, g("w3")?, Some(g("b3")?))
}

fn logit(s: f64) -> f64 {
    let s = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    (s / (1.0 - s)).ln()
}

/// Applies raw head output to node boxes and scores.
pub fn decode(raw: &Tensor, boxes: &[BevBox3D], scores: &[f64]) -> Result<Predictions> {
    let n = boxes.len();
    let mut out = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n * NUM_CLASSES);
    for i in 0..n {
        let d = raw.row(i);
        let b = &boxes[i];
        let e = |k: usize| d[k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        out.push(BevBox3D::new(
            b.x() + d[0],
            b.y() + d[1],
            b.z() + d[2],
            b.l() * e(3),
            b.w() * e(4),
            b.h() * e(5),
            b.heading() + d[6],
        )?);
        let prior = logit(scores[i]);
        logits.extend(d[BOX_DELTAS..].iter().map(|z| z + prior));
    }
    Ok(Predictions {
        boxes: out,
        logits: Tensor::new(vec![n, NUM_CLASSES], logits)?,
    })
}

/// Chains loss gradients w.r.t. decoded boxes and logits back to the raw
/// head output.
pub fn raw_gradient(raw: &Tensor, pred: &Predictions, loss: &LossOutput) -> Tensor {
    let n = pred.len();
    let mut g = vec![0.0; n * HEAD_OUT];
    for i in 0..n {
        let gb = &loss.grad_boxes[i];
        let b = &pred.boxes[i];
        let row = &mut g[i * HEAD_OUT..(i + 1) * HEAD_OUT];
        let inside = |k: usize| raw.at(i, k).abs() < MAX_LOG_SCALE;
        row[0] = gb[0];
        row[1] = gb[1];
        row[2] = gb[2];
        for (k, size) in [(3, b.l()), (4, b.w()), (5, b.h())] {
            if inside(k) {
                row[k] = gb[k] * size;
            }
        }
        row[6] = gb[6];
        row[BOX_DELTAS..].copy_from_slice(loss.grad_logits.row(i));
    }
    Tensor::new(vec![n, HEAD_OUT], g).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn fresh_head_reproduces_nodes() {
        let mut init = Init::new(1);
        let p = init_head(&mut init, "head", 8);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let x = tape.leaf(init.uniform(&[3, 8], 1));
        let raw = head_forward(x, &bound, "head").unwrap().to_tensor();
        let boxes: Vec<_> = (0..3)
            .map(|i| BevBox3D::new(i as f64, 1.0, 0.5, 4.0, 2.0, 1.5, 0.3).unwrap())
            .collect();
        let scores = [0.9, 0.5, 0.2];
        let pred = decode(&raw, &boxes, &scores).unwrap();
        assert_eq!(pred.boxes, boxes);
        for (s, t) in pred.scores().iter().zip(scores) {
            assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_applies_log_scale_deltas() {
        let b = BevBox3D::axis_aligned(0.0, 0.0, 0.0, 2.0, 1.0, 1.0).unwrap();
        let mut raw = Tensor::zeros(&[1, HEAD_OUT]);
        raw.data_mut()[0] = 0.5;
        raw.data_mut()[3] = 2f64.ln();
        raw.data_mut()[6] = 0.1;
        let p = decode(&raw, &[b], &[0.5]).unwrap();
        assert_eq!(p.boxes[0].x(), 0.5);
        assert!((p.boxes[0].l() - 4.0).abs() < 1e-12);
        assert!((p.boxes[0].heading() - 0.1).abs() < 1e-12);
    }
}
