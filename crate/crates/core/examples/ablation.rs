//! Cumulative component ablation: each row switches on one more module,
//! trains, and evaluates on held-out scenes.
//!
//! `cargo run --release --example ablation -- [steps] [eval_seeds]`

use stgraph::ablation::{run_ablation, AblationOptions};
use stgraph::config::Config;
use stgraph::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let mut opts = AblationOptions::default();
    if let Some(Some(s)) = args.next() {
        opts.steps = s;
    }
    if let Some(Some(e)) = args.next() {
        opts.eval_seeds = e;
    }
    println!("{:<12} {:>10} {:>10} {:>12} {:>10} {:>10}", "row", "recall@.5", "recall@.7", "pred@.5", "pair IoU", "loss");
    for r in run_ablation(&Config::default(), &opts)? {
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>12.4} {:>10.4} {:>10.4}",
            r.name, r.recall_05, r.recall_07, r.pred_recall_05, r.mean_pairwise_iou, r.final_loss
        );
    }
    Ok(())
}
