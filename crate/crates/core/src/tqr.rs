//! Query recollection: the decoder-input query set is the top current-frame
//! proposals plus the top-scored final predictions of the previous frame,
//! all embedded by a position encoding of `(box, score)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevBox3D;
use crate::nn::linear;
use crate::params::{Bound, Init, ParamStore};
use crate::selection::{top_k, QuerySet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Normalized inputs: `x, y, z, l, w, h, sin, cos, score`.
pub const PE_INPUTS: usize = 9;
pub const PE_FREQS: usize = 6;
pub const PE_FEATURES: usize = PE_INPUTS * PE_FREQS * 2;

const POS_SCALE: f64 = 50.0;
const Z_SCALE: f64 = 4.0;
const LEN_SCALE: f64 = 10.0;
const WIDTH_SCALE: f64 = 5.0;

/// Sinusoidal features of one `(box, score)` pair.
pub fn pe_features(b: &BevBox3D, score: f64) -> [f64; PE_FEATURES] {
    let (s, c) = b.heading().sin_cos();
    let v = [
        b.x() / POS_SCALE,
        b.y() / POS_SCALE,
        b.z() / Z_SCALE,
        b.l() / LEN_SCALE,
        b.w() / WIDTH_SCALE,
        b.h() / WIDTH_SCALE,
        s,
        c,
        score,
    ];
    let mut out = [0.0; PE_FEATURES];
    for (k, x) in v.iter().enumerate() {
        for m in 0..PE_FREQS {
            let a = std::f64::consts::PI * (1u32 << m) as f64 * x;
            out[(k * PE_FREQS + m) * 2] = a.sin();
            out[(k * PE_FREQS + m) * 2 + 1] = a.cos();
        }
    }
    out
}

/// Feature rows `[n, PE_FEATURES]`.
pub fn pe_feature_matrix(boxes: &[BevBox3D], scores: &[f64]) -> Tensor {
    let data = boxes
        .iter()
        .zip(scores)
        .flat_map(|(b, &s)| pe_features(b, s))
        .collect();
    Tensor::new(vec![boxes.len(), PE_FEATURES], data).expect("shape")
}

/// `{p}.w [PE_FEATURES, c]` and `{p}.b [c]`.
pub fn init_pe(init: &mut Init, prefix: &str, c: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(format!("{prefix}.w"), init.weight(PE_FEATURES, c))
        .expect("fresh");
    p.insert(format!("{prefix}.b"), init.uniform(&[c], PE_FEATURES))
        .expect("fresh");
    p
}

/// Recorded encoding of a feature matrix.
pub fn encode_var<'t>(features: Var<'t>, params: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    linear(
        features,
        params.get(&format!("{prefix}.w"))?,
        Some(params.get(&format!("{prefix}.b"))?),
    )
}

/// Embeddings `[n, c]` for aligned boxes and scores.
pub fn encode(boxes: &[BevBox3D], scores: &[f64], params: &ParamStore, prefix: &str) -> Result<Tensor> {
    let w = params.get(&format!("{prefix}.w"))?;
    let b = params.get(&format!("{prefix}.b"))?;
    if boxes.is_empty() {
        return Ok(Tensor::zeros(&[0, w.cols()]));
    }
    pe_feature_matrix(boxes, scores).matmul(w)?.add_row(b)
}

/// Embedding of a single `(box, score)`, shape `[c]`.
pub fn position_encode(b: &BevBox3D, score: f64, params: &ParamStore, prefix: &str) -> Result<Tensor> {
    let e = encode(&[*b], &[score], params, prefix)?;
    let c = e.cols();
    e.reshape(vec![c])
}

/// Gradient-capable variant used by checks: encodes on a fresh tape.
pub fn position_encode_recorded<'t>(
    tape: &'t Tape,
    boxes: &[BevBox3D],
    scores: &[f64],
    params: &Bound<'t>,
    prefix: &str,
) -> Result<Var<'t>> {
    encode_var(tape.leaf(pe_feature_matrix(boxes, scores)), params, prefix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Encoder,
    Recollected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInit {
    pub queries: QuerySet,
    pub provenance: Vec<Provenance>,
}

impl QueryInit {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn recollected_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| **p == Provenance::Recollected)
            .count()
    }
}

/// Top `n_p` proposals followed by the top `n_res` previous predictions.
/// Missing history is replaced by the next-best proposals, so the result
/// always holds `n_p + n_res` queries.
pub fn recollect(
    prev_pred: &QuerySet,
    proposals: &QuerySet,
    n_p: usize,
    n_res: usize,
    params: &ParamStore,
    prefix: &str,
) -> Result<QueryInit> {
    let from_prev = top_k(&prev_pred.scores, n_res);
    let from_props = n_p + n_res - from_prev.len();
    if proposals.len() < from_props {
        return Err(Error::TooFewProposals {
            needed: from_props,
            available: proposals.len(),
        });
    }
    let props = top_k(&proposals.scores, from_props);
    let mut boxes = Vec::with_capacity(n_p + n_res);
    let mut scores = Vec::with_capacity(n_p + n_res);
    let mut provenance = Vec::with_capacity(n_p + n_res);
    for &i in &props[..n_p] {
        boxes.push(proposals.boxes[i]);
        scores.push(proposals.scores[i]);
        provenance.push(Provenance::Encoder);
    }
    for &i in &from_prev {
        boxes.push(prev_pred.boxes[i]);
        scores.push(prev_pred.scores[i]);
        provenance.push(Provenance::Recollected);
    }
    for &i in &props[n_p..] {
        boxes.push(proposals.boxes[i]);
        scores.push(proposals.scores[i]);
        provenance.push(Provenance::Encoder);
    }
    let embeddings = encode(&boxes, &scores, params, prefix)?;
    Ok(QueryInit {
        queries: QuerySet::new(boxes, scores, embeddings)?,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn props(n: usize) -> QuerySet {
        let boxes = (0..n)
            .map(|i| BevBox3D::axis_aligned(3.0 * i as f64, 0.0, 0.0, 1.0, 1.0, 1.0).unwrap())
            .collect();
        let scores = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        QuerySet::new(boxes, scores, Tensor::zeros(&[n, 0])).unwrap()
    }

    #[test]
    fn features_are_bounded_and_deterministic() {
        let b = BevBox3D::new(12.0, -3.0, 0.8, 4.5, 1.9, 1.6, 0.4).unwrap();
        let f = pe_features(&b, 0.7);
        assert_eq!(f, pe_features(&b, 0.7));
        assert!(f.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(f, pe_features(&b, 0.71));
    }

    #[test]
    fn no_history_pads_from_proposals() {
        let p = init_pe(&mut Init::new(0), "pe", 4);
        let q = recollect(&QuerySet::empty(4), &props(10), 5, 3, &p, "pe").unwrap();
        assert_eq!(q.len(), 8);
        assert_eq!(q.recollected_count(), 0);
        assert_eq!(q.queries.boxes, props(10).subset(&(0..8).collect::<Vec<_>>()).boxes);
    }

    #[test]
    fn zero_budget_is_plain_top_proposals() {
        let p = init_pe(&mut Init::new(0), "pe", 4);
        let prev = props(4);
        let q = recollect(&prev, &props(10), 6, 0, &p, "pe").unwrap();
        assert_eq!(q.queries.scores, props(10).scores[..6].to_vec());
    }

    #[test]
    fn history_is_appended_after_proposals() {
        let p = init_pe(&mut Init::new(0), "pe", 4);
        let prev = props(2);
        let q = recollect(&prev, &props(10), 5, 3, &p, "pe").unwrap();
        assert_eq!(q.len(), 8);
        assert_eq!(q.recollected_count(), 2);
        assert_eq!(q.provenance[5], Provenance::Recollected);
        assert_eq!(q.provenance[7], Provenance::Encoder);
        assert_eq!(q.queries.scores[7], props(10).scores[5]);
    }

    #[test]
    fn too_few_proposals() {
        let p = init_pe(&mut Init::new(0), "pe", 4);
        let err = recollect(&QuerySet::empty(4), &props(3), 5, 1, &p, "pe").unwrap_err();
        assert!(matches!(err, Error::TooFewProposals { needed: 6, available: 3 }));
    }
}
