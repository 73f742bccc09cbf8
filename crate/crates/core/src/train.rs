//! Gradient-descent training of the query path (position encoding, graph
//! attention, graph head) on simulated frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::head::{decode, raw_gradient};
use crate::loss::{match_cost, total_loss, GroundTruth, LossBreakdown, Predictions};
use crate::matching::assign;
use crate::params::ParamStore;
use crate::pipeline::{forward_nodes, mean_pairwise_iou, recall_at, run_frame, PipelineState, GRU};
use crate::selection::QuerySet;
use crate::sim::{Frame, SceneSequence};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One training example: the graph nodes of a frame, the previous frame's
/// nodes and the frame's ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub nodes: QuerySet,
    pub prev: QuerySet,
    pub gt: GroundTruth,
}

pub fn ground_truth(frame: &Frame) -> GroundTruth {
    GroundTruth {
        boxes: frame.boxes.clone(),
        classes: frame.classes.iter().map(|c| c.index()).collect(),
    }
}

/// Streams the first `frames_per_scene` frames of each scene through the
/// pipeline with `params` and records the node sets it selects.
pub fn collect_samples(
    scenes: &[SceneSequence],
    frames_per_scene: usize,
    params: &ParamStore,
    cfg: &Config,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (k, scene) in scenes.iter().enumerate() {
        let mut state = PipelineState::initial(cfg);
        let run_seed = seed.wrapping_add(k as u64);
        for frame in scene.frames.iter().take(frames_per_scene) {
            let prev = if cfg.sequential {
                state.prev_nodes.clone()
            } else {
                QuerySet::empty(cfg.c)
            };
            let step = run_frame(&state, frame, params, cfg, run_seed)?;
            if !step.selection.nodes.is_empty() {
                out.push(Sample {
                    nodes: step.selection.nodes.clone(),
                    prev,
                    gt: ground_truth(frame),
                });
            }
            state = step.state;
        }
    }
    Ok(out)
}

/// Predictions for a sample under `params`.
pub fn predict(params: &ParamStore, sample: &Sample, cfg: &Config) -> Result<Predictions> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let raw = forward_nodes(&tape, &bound, &sample.nodes, &sample.prev, cfg)?;
    decode(&raw.to_tensor(), &sample.nodes.boxes, &sample.nodes.scores)
}

/// Loss of one sample and its gradient w.r.t. every parameter.
pub fn sample_loss(
    params: &ParamStore,
    sample: &Sample,
    cfg: &Config,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let raw = forward_nodes(&tape, &bound, &sample.nodes, &sample.prev, cfg)?;
    let raw_t = raw.to_tensor();
    let pred = decode(&raw_t, &sample.nodes.boxes, &sample.nodes.scores)?;
    let lcfg = cfg.loss();
    let assignment = assign(&match_cost(&pred, &sample.gt, &lcfg.weights))?;
    let out = total_loss(&pred, &sample.gt, &assignment, &lcfg);
    let g = raw_gradient(&raw_t, &pred, &out);
    let loss = tape.custom("detection_loss", &[raw], Tensor::scalar(out.breakdown.total), move |up| {
        vec![g.scale(up.item())]
    });
    tape.check_finite()?;
    let grads = tape.backward(loss);
    Ok((out.breakdown, bound.gradients(&grads)))
}

/// Mean loss and gradient over samples.
pub fn batch_loss(
    params: &ParamStore,
    samples: &[Sample],
    cfg: &Config,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut total = LossBreakdown::default();
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let k = samples.len().max(1) as f64;
    for s in samples {
        let (b, g) = sample_loss(params, s, cfg)?;
        total.cls += b.cls / k;
        total.huber += b.huber / k;
        total.giou += b.giou / k;
        total.reg += b.reg / k;
        total.total += b.total / k;
        for (name, t) in g {
            let t = t.scale(1.0 / k);
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(name, t);
                }
            }
        }
    }
    grads.retain(|name, _| !name.starts_with(GRU));
    Ok((total, grads))
}

/// Quality of the confident predictions (score above the threshold) over a
/// sample set, averaged per sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_pairwise_iou: f64,
    pub recall_05: f64,
    pub recall_07: f64,
    pub confident: f64,
}

pub fn evaluate(params: &ParamStore, samples: &[Sample], cfg: &Config) -> Result<Evaluation> {
    let mut e = Evaluation::default();
    for s in samples {
        let pred = predict(params, s, cfg)?;
        let boxes: Vec<_> = pred
            .scores()
            .iter()
            .zip(&pred.boxes)
            .filter(|(&p, _)| p > cfg.score_threshold)
            .map(|(_, b)| *b)
            .collect();
        e.mean_pairwise_iou += mean_pairwise_iou(&boxes);
        e.recall_05 += recall_at(&boxes, &s.gt.boxes, 0.5);
        e.recall_07 += recall_at(&boxes, &s.gt.boxes, 0.7);
        e.confident += boxes.len() as f64;
    }
    let k = samples.len().max(1) as f64;
    e.mean_pairwise_iou /= k;
    e.recall_05 /= k;
    e.recall_07 /= k;
    e.confident /= k;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Plain gradient descent for `steps` updates, with the step size set by
/// `cfg.train.schedule`. The trace holds `steps + 1`
/// records: the loss before each update and the loss after the last one.
pub fn train_on_samples(
    params: &mut ParamStore,
    samples: &[Sample],
    steps: usize,
    lr: f64,
    cfg: &Config,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        // blown-up parameters surface as non-finite values or degenerate boxes
        let (loss, grads) = batch_loss(params, samples, cfg).map_err(|e| match e {
            Error::NonFinite { .. } | Error::InvalidBox(_) => Error::Diverged { step },
            e => e,
        })?;
        if !loss.total.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let rec = StepRecord { step, loss };
        on_step(&rec);
        trace.push(rec);
        if step < steps && lr != 0.0 {
            params.sgd_step(&grads, cfg.train.schedule.at(lr, step, steps));
        }
    }
    Ok(trace)
}

/// Collects samples from `scenes` with the initial parameters, then trains.
pub fn train_toy(
    params: &mut ParamStore,
    scenes: &[SceneSequence],
    steps: usize,
    lr: f64,
    cfg: &Config,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let samples = collect_samples(scenes, cfg.train.frames, params, cfg, seed)?;
    train_on_samples(params, &samples, steps, lr, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::init_params;
    use crate::sim::simulate;

    fn small() -> (Config, Vec<SceneSequence>) {
        let mut cfg = Config::default();
        cfg.c = 8;
        cfg.sim.frames = 2;
        cfg.train.frames = 2;
        let scene = simulate(&cfg.sim, 1).unwrap();
        (cfg, vec![scene])
    }

    #[test]
    fn zero_lr_gives_a_constant_trace() {
        let (cfg, scenes) = small();
        let mut p = init_params(&cfg, 0);
        let before = p.clone();
        let trace = train_toy(&mut p, &scenes, 3, 0.0, &cfg, 0).unwrap();
        assert_eq!(trace.len(), 4);
        assert!(trace.iter().all(|r| r.loss == trace[0].loss));
        assert_eq!(p, before);
    }

    #[test]
    fn a_few_steps_reduce_the_loss() {
        let (cfg, scenes) = small();
        let mut p = init_params(&cfg, 0);
        let trace = train_toy(&mut p, &scenes, 20, cfg.train.lr, &cfg, 0).unwrap();
        assert!(trace.last().unwrap().loss.total < trace[0].loss.total);
    }

    #[test]
    fn huge_steps_report_divergence() {
        let (cfg, scenes) = small();
        let mut p = init_params(&cfg, 0);
        let err = train_toy(&mut p, &scenes, 50, 1e6, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn records_serialize_with_loss_names() {
        let r = StepRecord {
            step: 3,
            loss: LossBreakdown::default(),
        };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for k in ["step", "L_cls", "L_huber", "L_giou", "R_b", "total"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
