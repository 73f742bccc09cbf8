//! Training the graph head on a few simulated frames and evaluating the
//! streaming pipeline before and after.
//!
//! `cargo run --release --example train_toy -- [steps]`

use stgraph::config::Config;
use stgraph::pipeline::{init_params, run_sequence, Aggregate};
use stgraph::sim::simulate;
use stgraph::train::train_toy;
use stgraph::Result;

fn main() -> Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = Config::default();
    let scenes = vec![simulate(&cfg.sim, 0)?, simulate(&cfg.sim, 1)?];
    let held_out = simulate(&cfg.sim, 100)?;

    let mut params = init_params(&cfg, 0);
    let before = Aggregate::from_frames(&run_sequence(&held_out, &params, &cfg, 0)?.metrics);
    let trace = train_toy(&mut params, &scenes, steps, cfg.train.lr, &cfg, 0)?;
    for r in trace.iter().step_by((steps / 10).max(1)) {
        println!("step {:4}: total {:.4}  cls {:.4}  huber {:.4}  giou {:.4}  reg {:.4}", r.step, r.loss.total, r.loss.cls, r.loss.huber, r.loss.giou, r.loss.reg);
    }
    let after = Aggregate::from_frames(&run_sequence(&held_out, &params, &cfg, 0)?.metrics);
    println!(
        "held-out prediction recall@0.5 {:.3} -> {:.3}, query recall@0.5 {:.3} -> {:.3}",
        before.pred_recall_05, after.pred_recall_05, before.query_recall_05, after.query_recall_05
    );
    Ok(())
}
