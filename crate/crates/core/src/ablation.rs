//! Component ablation. Starting from a baseline with every component off,
//! components are switched on one at a time; each row is trained on the same
//! scenes and evaluated on the same held-out sequences.

use serde::{Deserialize, Serialize};

use crate::config::{Config, GraphMode};
use crate::error::Result;
use crate::pipeline::{init_params, run_sequence, MetricsReport};
use crate::sim::simulate;
use crate::train::train_toy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub train_scenes: usize,
    pub steps: usize,
    pub eval_seeds: usize,
    pub seed: u64,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            train_scenes: 4,
            steps: 300,
            eval_seeds: 10,
            seed: 0,
        }
    }
}

/// Cumulative rows: baseline, then temporal modules, sparse graph attention,
/// query recollection and the IoU regularizer.
pub fn lattice(base: &Config) -> Vec<(&'static str, Config)> {
    let mut c = base.clone();
    c.sequential = false;
    c.graph_mode = GraphMode::Dense;
    c.tqr = false;
    c.iou_reg = false;
    let mut rows = vec![("baseline", c.clone())];
    c.sequential = true;
    rows.push(("+sequential", c.clone()));
    c.graph_mode = GraphMode::Stga;
    rows.push(("+stga", c.clone()));
    c.tqr = true;
    rows.push(("+tqr", c.clone()));
    c.iou_reg = true;
    rows.push(("+iou_reg", c));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config_hash: String,
    /// Query recall averaged over evaluation sequences.
    pub recall_05: f64,
    pub recall_07: f64,
    pub pred_recall_05: f64,
    pub mean_pairwise_iou: f64,
    pub final_loss: f64,
    /// One metrics document per evaluation sequence.
    pub reports: Vec<MetricsReport>,
}

pub fn run_row(name: &str, cfg: &Config, opts: &AblationOptions) -> Result<AblationRow> {
    let scenes = (0..opts.train_scenes)
        .map(|k| simulate(&cfg.sim, opts.seed + k as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut params = init_params(cfg, opts.seed);
    let trace = train_toy(&mut params, &scenes, opts.steps, cfg.train.lr, cfg, opts.seed)?;
    let mut reports = Vec::with_capacity(opts.eval_seeds);
    for k in 0..opts.eval_seeds {
        let eval_seed = opts.seed + 1000 + k as u64;
        let scene = simulate(&cfg.sim, eval_seed)?;
        let out = run_sequence(&scene, &params, cfg, eval_seed)?;
        reports.push(MetricsReport::new(cfg, out.metrics));
    }
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len().max(1) as f64;
    Ok(AblationRow {
        name: name.to_string(),
        config_hash: cfg.hash(),
        recall_05: mean(|r| r.aggregate.query_recall_05),
        recall_07: mean(|r| r.aggregate.query_recall_07),
        pred_recall_05: mean(|r| r.aggregate.pred_recall_05),
        mean_pairwise_iou: mean(|r| r.aggregate.mean_pairwise_iou),
        final_loss: trace.last().map_or(f64::NAN, |r| r.loss.total),
        reports,
    })
}

pub fn run_ablation(base: &Config, opts: &AblationOptions) -> Result<Vec<AblationRow>> {
    lattice(base).iter().map(|(name, cfg)| run_row(name, cfg, opts)).collect()
}
