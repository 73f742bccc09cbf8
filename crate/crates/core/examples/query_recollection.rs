//! Recollecting last frame's confident predictions as extra queries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stgraph::config::Config;
use stgraph::pipeline::{init_params, recall_at, PE};
use stgraph::selection::QuerySet;
use stgraph::sim::{propose, simulate};
use stgraph::tqr::recollect;
use stgraph::train::ground_truth;
use stgraph::{Result, Tensor};

fn main() -> Result<()> {
    let cfg = Config::default();
    let scene = simulate(&cfg.sim, 7)?;
    let params = init_params(&cfg, 7);
    let (prev_frame, frame) = (&scene.frames[4], &scene.frames[5]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let proposals = propose(frame, &cfg.noise, &mut rng);

    // Stand-in for last frame's predictions: its ground truth at high score.
    let prev_gt = ground_truth(prev_frame);
    let n = prev_gt.len();
    let prev = QuerySet::new(prev_gt.boxes, vec![0.9; n], Tensor::zeros(&[n, 0]))?;
    let gt = ground_truth(frame).boxes;

    let plain = recollect(&QuerySet::empty(0), &proposals, cfg.n_p, cfg.n_res, &params, PE)?;
    let with = recollect(&prev, &proposals, cfg.n_p, cfg.n_res, &params, PE)?;
    for (label, q) in [("proposals only", &plain), ("with recollection", &with)] {
        println!(
            "{label:>18}: {} queries, {} recollected, recall@0.5 {:.3}, recall@0.7 {:.3}",
            q.len(),
            q.recollected_count(),
            recall_at(&q.queries.boxes, &gt, 0.5),
            recall_at(&q.queries.boxes, &gt, 0.7)
        );
    }
    Ok(())
}
