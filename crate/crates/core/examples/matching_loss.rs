//! Bipartite matching of predictions to ground truth and the resulting
//! loss terms, with and without the overlap regularizer.

use stgraph::loss::{match_cost, total_loss, GroundTruth, LossConfig, Predictions};
use stgraph::matching::hungarian;
use stgraph::{BevBox3D, Result, Tensor};

fn main() -> Result<()> {
    let gt = GroundTruth {
        boxes: vec![
            BevBox3D::new(0.0, 0.0, 0.8, 4.5, 1.9, 1.6, 0.1)?,
            BevBox3D::new(8.0, 3.0, 0.9, 0.8, 0.7, 1.7, 1.2)?,
        ],
        classes: vec![0, 1],
    };
    let pred = Predictions {
        boxes: vec![
            BevBox3D::new(7.7, 3.2, 0.9, 0.9, 0.7, 1.7, 1.0)?,
            BevBox3D::new(0.3, 0.1, 0.8, 4.3, 1.8, 1.6, 0.0)?,
            BevBox3D::new(0.6, 0.2, 0.8, 4.3, 1.8, 1.6, 0.0)?,
        ],
        logits: Tensor::matrix(3, 3, vec![-3.0, 1.5, -2.0, 2.0, -3.0, -3.0, 1.0, -3.0, -3.0])?,
    };

    let mut cfg = LossConfig::default();
    let cost = match_cost(&pred, &gt, &cfg.weights);
    let assignment = hungarian(&cost)?;
    println!("pairs (prediction, gt) {:?}, unmatched {:?}", assignment.pairs, assignment.unmatched);
    println!("assignment cost {:.4}", assignment.total_cost(&cost));

    let with = total_loss(&pred, &gt, &assignment, &cfg);
    cfg.weights.lambda_r = 0.0;
    let without = total_loss(&pred, &gt, &assignment, &cfg);
    println!("with regularizer:    {:?}", with.breakdown);
    println!("without regularizer: {:?}", without.breakdown);
    println!("duplicate's logit gradient {:.4} vs {:.4}", with.grad_logits.at(2, 0), without.grad_logits.at(2, 0));
    Ok(())
}
