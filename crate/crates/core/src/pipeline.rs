//! Streaming frame loop: proposals, query recollection, node selection,
//! graph attention, graph head, metrics.
//!
//! Proposal boxes with their position encodings stand in for decoder
//! output. A ConvGRU runs alongside on a coarse occupancy grid of the
//! proposals; its state is carried and logged but does not feed the query
//! path.

use serde::{Deserialize, Serialize};

use crate::config::{Config, GraphMode};
use crate::convgru::{self, ConvGruState};
use crate::error::Result;
use crate::geometry::{iou_bev, BevBox3D};
use crate::head::{self, decode, head_forward};
use crate::loss::{LossBreakdown, Predictions};
use crate::nn::{dense_mhsa, init_mhsa};
use crate::params::{Bound, Init, ParamStore};
use crate::selection::{select_nodes, top_k, QuerySet, Selection};
use crate::sim::{frame_rng, propose, Frame, SceneSequence};
use crate::stga::{
    build_spatial_graph, build_temporal_edges, init_spatial, init_temporal, spatial_attention, stga_forward,
    temporal_cross_attention,
};
use crate::tape::{concat_rows, Tape, Var};
use crate::tensor::Tensor;
use crate::tqr::{self, recollect, Provenance};

pub const PE: &str = "pe";
pub const SPATIAL: &str = "stga.spatial";
pub const TEMPORAL: &str = "stga.temporal";
pub const DENSE: &str = "mhsa";
pub const HEAD: &str = "head";
pub const GRU: &str = "gru";

/// Every learnable tensor of the pipeline, seeded.
pub fn init_params(cfg: &Config, seed: u64) -> ParamStore {
    let mut init = Init::new(seed);
    let c = cfg.c;
    let mut p = ParamStore::new();
    p.extend(tqr::init_pe(&mut init, PE, c)).expect("disjoint");
    p.extend(init_spatial(&mut init, SPATIAL, c)).expect("disjoint");
    p.extend(init_temporal(&mut init, TEMPORAL, c)).expect("disjoint");
    p.extend(init_mhsa(&mut init, DENSE, c)).expect("disjoint");
    p.extend(head::init_head(&mut init, HEAD, c)).expect("disjoint");
    p.extend(convgru::init_params(&mut init, GRU, cfg.gru_channels))
        .expect("disjoint");
    p
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    /// Index of the next frame.
    pub t: usize,
    /// Graph nodes of the previous frame with their decoder embeddings.
    pub prev_nodes: QuerySet,
    /// Top-scored final predictions of the previous frame.
    pub prev_preds: QuerySet,
    pub gru: ConvGruState,
}

impl PipelineState {
    pub fn initial(cfg: &Config) -> Self {
        Self {
            t: 0,
            prev_nodes: QuerySet::empty(cfg.c),
            prev_preds: QuerySet::empty(0),
            gru: ConvGruState::zeros(cfg.gru_channels, cfg.grid, cfg.grid),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Graph embedding of the current nodes given the previous frame's nodes.
/// `prev` is ignored when `cfg.sequential` is off.
pub fn graph_embedding<'t>(
    params: &Bound<'t>,
    cur: Var<'t>,
    cur_boxes: &[BevBox3D],
    prev: Option<(Var<'t>, &[BevBox3D])>,
    cfg: &Config,
) -> Result<Var<'t>> {
    let prev = prev.filter(|(_, b)| cfg.sequential && !b.is_empty());
    match cfg.graph_mode {
        GraphMode::Stga => {
            let scfg = cfg.stga();
            let sg = build_spatial_graph(cur_boxes, &scfg);
            let spatial = spatial_attention(&sg, cur, params, SPATIAL, &scfg)?;
            let temporal = match prev {
                Some((pv, pb)) => {
                    let tg = build_temporal_edges(cur_boxes, pb, &scfg);
                    temporal_cross_attention(&tg, cur, pv, params, TEMPORAL, &scfg)?
                }
                None => cur,
            };
            stga_forward(spatial, temporal)
        }
        GraphMode::Dense => {
            let n = cur_boxes.len();
            let x = match prev {
                Some((pv, _)) => concat_rows(&[cur, pv])?,
                None => cur,
            };
            dense_mhsa(x, params, DENSE, cfg.heads)?.slice_rows(0, n)
        }
    }
}

/// Raw graph-head output for a set of nodes, recorded on `tape`. Node
/// embeddings are recomputed from their position encoding so gradients
/// reach the encoder.
pub fn forward_nodes<'t>(
    tape: &'t Tape,
    params: &Bound<'t>,
    nodes: &QuerySet,
    prev: &QuerySet,
    cfg: &Config,
) -> Result<Var<'t>> {
    let cur = tqr::encode_var(tape.leaf(tqr::pe_feature_matrix(&nodes.boxes, &nodes.scores)), params, PE)?;
    let prev_var = if prev.is_empty() {
        None
    } else {
        let pv = tqr::encode_var(tape.leaf(tqr::pe_feature_matrix(&prev.boxes, &prev.scores)), params, PE)?;
        Some((pv, prev.boxes.as_slice()))
    };
    let emb = graph_embedding(params, cur, &nodes.boxes, prev_var, cfg)?;
    head_forward(emb, params, HEAD)
}

/// Fraction of ground-truth boxes covered by at least one candidate with
/// `iou_bev >= tau`. Empty ground truth gives 1.
pub fn recall_at(boxes: &[BevBox3D], gt: &[BevBox3D], tau: f64) -> f64 {
    if gt.is_empty() {
        return 1.0;
    }
    let hit = gt
        .iter()
        .filter(|g| {
            boxes
                .iter()
                .any(|b| (b.x() - g.x()).hypot(b.y() - g.y()) < b.bev_radius() + g.bev_radius() && iou_bev(b, g) >= tau)
        })
        .count();
    hit as f64 / gt.len() as f64
}

/// Mean BEV IoU over unordered pairs; 0 with fewer than two boxes.
pub fn mean_pairwise_iou(boxes: &[BevBox3D]) -> f64 {
    let n = boxes.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += iou_bev(&boxes[i], &boxes[j]);
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Two-channel occupancy surrogate `[channels, grid, grid]`: max proposal
/// score and `1 - exp(-count)` per cell; extra channels stay zero.
pub fn occupancy_grid(q: &QuerySet, cfg: &Config) -> Tensor {
    let g = cfg.grid;
    let mut out = Tensor::zeros(&[cfg.gru_channels, g, g]);
    let mut counts = vec![0usize; g * g];
    let (xr, yr) = (cfg.noise.x_range, cfg.noise.y_range);
    let data = out.data_mut();
    for (b, &s) in q.boxes.iter().zip(&q.scores) {
        let u = ((b.x() + xr) / (2.0 * xr) * g as f64).floor();
        let v = ((b.y() + yr) / (2.0 * yr) * g as f64).floor();
        if !(0.0..g as f64).contains(&u) || !(0.0..g as f64).contains(&v) {
            continue;
        }
        let cell = v as usize * g + u as usize;
        data[cell] = data[cell].max(s);
        counts[cell] += 1;
    }
    if cfg.gru_channels > 1 {
        for (cell, &k) in counts.iter().enumerate() {
            data[g * g + cell] = 1.0 - (-(k as f64)).exp();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    pub n_gt: usize,
    /// Ground truth empty: recalls are reported as 1.
    pub empty_gt: bool,
    pub n_proposals: usize,
    pub n_queries: usize,
    pub n_recollected: usize,
    pub n_nodes: usize,
    /// Recall of the decoder-input queries.
    pub query_recall_05: f64,
    pub query_recall_07: f64,
    /// Recall of the top `n_p` proposals alone.
    pub proposal_recall_05: f64,
    pub proposal_recall_07: f64,
    pub node_recall_05: f64,
    pub node_recall_07: f64,
    /// Recall of all graph-head predictions.
    pub pred_recall_05: f64,
    pub pred_recall_07: f64,
    pub n_confident: usize,
    /// Mean pairwise BEV IoU of predictions scoring above the threshold.
    pub mean_pairwise_iou: f64,
    /// Ground truths per class hit by a confident prediction of that class
    /// at IoU 0.5: vehicle, pedestrian, cyclist.
    pub class_matches: [usize; 3],
    pub spatial_edges: usize,
    pub temporal_edges: usize,
    pub gru_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<LossBreakdown>,
}

pub struct FrameOutput {
    pub predictions: Predictions,
    pub queries: tqr::QueryInit,
    pub selection: Selection,
    pub metrics: FrameMetrics,
    pub state: PipelineState,
}

/// Processes one frame. Proposal noise is drawn from `(seed, frame.t)`, so
/// a run resumed from a saved state reproduces the original exactly.
pub fn run_frame(
    state: &PipelineState,
    frame: &Frame,
    params: &ParamStore,
    cfg: &Config,
    seed: u64,
) -> Result<FrameOutput> {
    let proposals = propose(frame, &cfg.noise, &mut frame_rng(seed, frame.t));
    let n_res = cfg.effective_n_res();
    let queries = recollect(&state.prev_preds, &proposals, cfg.n_p, n_res, params, PE)?;
    let selection = select_nodes(&queries.queries, cfg.theta, cfg.n_g)?;
    let nodes = &selection.nodes;

    let predictions = if nodes.is_empty() {
        Predictions {
            boxes: vec![],
            logits: Tensor::zeros(&[0, head::NUM_CLASSES]),
        }
    } else {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let cur = tape.leaf(nodes.embeddings.clone());
        let prev = (!state.prev_nodes.is_empty())
            .then(|| (tape.leaf(state.prev_nodes.embeddings.clone()), state.prev_nodes.boxes.as_slice()));
        let emb = graph_embedding(&bound, cur, &nodes.boxes, prev, cfg)?;
        let raw = head_forward(emb, &bound, HEAD)?;
        tape.check_finite()?;
        decode(&raw.to_tensor(), &nodes.boxes, &nodes.scores)?
    };
    let scores = predictions.scores();

    let grid = occupancy_grid(&proposals, cfg);
    let (gru, _) = convgru::convgru_step(&state.gru, &grid, params, GRU)?;

    let scfg = cfg.stga();
    let spatial_edges = build_spatial_graph(&nodes.boxes, &scfg).edge_count();
    let temporal_edges = if cfg.sequential {
        build_temporal_edges(&nodes.boxes, &state.prev_nodes.boxes, &scfg).edge_count()
    } else {
        0
    };

    let gt = &frame.boxes;
    let top_props: Vec<BevBox3D> = queries
        .queries
        .boxes
        .iter()
        .zip(&queries.provenance)
        .take(cfg.n_p)
        .filter(|(_, p)| **p == Provenance::Encoder)
        .map(|(b, _)| *b)
        .collect();
    let confident: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > cfg.score_threshold)
        .collect();
    let conf_boxes: Vec<BevBox3D> = confident.iter().map(|&i| predictions.boxes[i]).collect();
    let mut class_matches = [0usize; 3];
    for (g, class) in gt.iter().zip(&frame.classes) {
        let k = class.index();
        if confident
            .iter()
            .any(|&i| predictions.best_class(i) == k && iou_bev(&predictions.boxes[i], g) >= 0.5)
        {
            class_matches[k] += 1;
        }
    }
    let metrics = FrameMetrics {
        t: frame.t,
        n_gt: gt.len(),
        empty_gt: gt.is_empty(),
        n_proposals: proposals.len(),
        n_queries: queries.len(),
        n_recollected: queries.recollected_count(),
        n_nodes: nodes.len(),
        query_recall_05: recall_at(&queries.queries.boxes, gt, 0.5),
        query_recall_07: recall_at(&queries.queries.boxes, gt, 0.7),
        proposal_recall_05: recall_at(&top_props, gt, 0.5),
        proposal_recall_07: recall_at(&top_props, gt, 0.7),
        node_recall_05: recall_at(&nodes.boxes, gt, 0.5),
        node_recall_07: recall_at(&nodes.boxes, gt, 0.7),
        pred_recall_05: recall_at(&predictions.boxes, gt, 0.5),
        pred_recall_07: recall_at(&predictions.boxes, gt, 0.7),
        n_confident: confident.len(),
        mean_pairwise_iou: mean_pairwise_iou(&conf_boxes),
        class_matches,
        spatial_edges,
        temporal_edges,
        gru_norm: gru.h.norm(),
        loss: None,
    };

    let keep = top_k(&scores, cfg.n_res);
    let n_keep = keep.len();
    let prev_preds = QuerySet::new(
        keep.iter().map(|&i| predictions.boxes[i]).collect(),
        keep.iter().map(|&i| scores[i]).collect(),
        Tensor::zeros(&[n_keep, 0]),
    )?;
    let state = PipelineState {
        t: frame.t + 1,
        prev_nodes: nodes.clone(),
        prev_preds,
        gru,
    };
    Ok(FrameOutput {
        predictions,
        queries,
        selection,
        metrics,
        state,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Frames with non-empty ground truth that enter the means.
    pub frames: usize,
    pub query_recall_05: f64,
    pub query_recall_07: f64,
    pub proposal_recall_05: f64,
    pub proposal_recall_07: f64,
    pub node_recall_05: f64,
    pub node_recall_07: f64,
    pub pred_recall_05: f64,
    pub pred_recall_07: f64,
    pub mean_pairwise_iou: f64,
    pub class_matches: [usize; 3],
}

impl Aggregate {
    pub fn from_frames(frames: &[FrameMetrics]) -> Self {
        let used: Vec<&FrameMetrics> = frames.iter().filter(|f| !f.empty_gt).collect();
        let mut a = Aggregate {
            frames: used.len(),
            ..Default::default()
        };
        for f in frames {
            for k in 0..3 {
                a.class_matches[k] += f.class_matches[k];
            }
        }
        if used.is_empty() {
            return a;
        }
        let mean = |g: fn(&FrameMetrics) -> f64| used.iter().map(|f| g(f)).sum::<f64>() / used.len() as f64;
        a.query_recall_05 = mean(|f| f.query_recall_05);
        a.query_recall_07 = mean(|f| f.query_recall_07);
        a.proposal_recall_05 = mean(|f| f.proposal_recall_05);
        a.proposal_recall_07 = mean(|f| f.proposal_recall_07);
        a.node_recall_05 = mean(|f| f.node_recall_05);
        a.node_recall_07 = mean(|f| f.node_recall_07);
        a.pred_recall_05 = mean(|f| f.pred_recall_05);
        a.pred_recall_07 = mean(|f| f.pred_recall_07);
        a.mean_pairwise_iou = mean(|f| f.mean_pairwise_iou);
        a
    }
}

/// Metrics document of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub frames_processed: usize,
    pub zero_frames: bool,
    pub per_frame: Vec<FrameMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn new(cfg: &Config, per_frame: Vec<FrameMetrics>) -> Self {
        Self {
            config_hash: cfg.hash(),
            frames_processed: per_frame.len(),
            zero_frames: per_frame.is_empty(),
            aggregate: Aggregate::from_frames(&per_frame),
            per_frame,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub struct RunOutput {
    pub metrics: Vec<FrameMetrics>,
    pub predictions: Vec<Predictions>,
    pub state: PipelineState,
}

/// Runs `frames` in order starting from `state`.
pub fn run_frames(
    state: PipelineState,
    frames: &[Frame],
    params: &ParamStore,
    cfg: &Config,
    seed: u64,
) -> Result<RunOutput> {
    let mut state = state;
    let mut metrics = Vec::with_capacity(frames.len());
    let mut predictions = Vec::with_capacity(frames.len());
    for f in frames {
        let out = run_frame(&state, f, params, cfg, seed)?;
        metrics.push(out.metrics);
        predictions.push(out.predictions);
        state = out.state;
    }
    Ok(RunOutput {
        metrics,
        predictions,
        state,
    })
}

pub fn run_sequence(scene: &SceneSequence, params: &ParamStore, cfg: &Config, seed: u64) -> Result<RunOutput> {
    run_frames(PipelineState::initial(cfg), &scene.frames, params, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;

    #[test]
    fn recall_basics() {
        let a = BevBox3D::axis_aligned(0.0, 0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let b = BevBox3D::axis_aligned(0.5, 0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(recall_at(&[a], &[a], 0.7), 1.0);
        assert_eq!(recall_at(&[], &[a], 0.5), 0.0);
        assert_eq!(recall_at(&[b], &[a], 0.3), 1.0);
        assert_eq!(recall_at(&[b], &[a], 0.5), 0.0);
        assert_eq!(recall_at(&[b], &[], 0.5), 1.0);
    }

    #[test]
    fn first_frame_has_no_temporal_edges() {
        let cfg = Config::default();
        let scene = simulate(&cfg.sim, 1).unwrap();
        let params = init_params(&cfg, 1);
        let out = run_frame(&PipelineState::initial(&cfg), &scene.frames[0], &params, &cfg, 1).unwrap();
        assert_eq!(out.metrics.temporal_edges, 0);
        assert_eq!(out.metrics.n_nodes, cfg.n_g);
        assert_eq!(out.metrics.n_queries, cfg.n_p + cfg.n_res);
        assert_eq!(out.state.t, 1);
    }

    #[test]
    fn untrained_head_keeps_node_boxes() {
        let cfg = Config::default();
        let scene = simulate(&cfg.sim, 4).unwrap();
        let params = init_params(&cfg, 2);
        let out = run_frame(&PipelineState::initial(&cfg), &scene.frames[0], &params, &cfg, 3).unwrap();
        assert_eq!(out.predictions.boxes, out.selection.nodes.boxes);
    }

    #[test]
    fn state_json_round_trip() {
        let cfg = Config::default();
        let scene = simulate(&cfg.sim, 5).unwrap();
        let params = init_params(&cfg, 5);
        let run = run_frames(PipelineState::initial(&cfg), &scene.frames[..3], &params, &cfg, 5).unwrap();
        let back = PipelineState::from_json(&run.state.to_json().unwrap()).unwrap();
        assert_eq!(back, run.state);
    }
}
