//! Soft score suppression followed by top-k node selection.

use stgraph::selection::{neighbor_sets, select_nodes, QuerySet};
use stgraph::{BevBox3D, Result, Tensor};

fn main() -> Result<()> {
    // Two clusters of near-duplicates and one isolated query.
    let boxes = vec![
        BevBox3D::axis_aligned(0.0, 0.0, 0.0, 4.0, 2.0, 1.5)?,
        BevBox3D::axis_aligned(0.3, 0.1, 0.0, 4.0, 2.0, 1.5)?,
        BevBox3D::axis_aligned(0.6, 0.0, 0.0, 4.0, 2.0, 1.5)?,
        BevBox3D::axis_aligned(10.0, 0.0, 0.0, 1.0, 1.0, 1.8)?,
        BevBox3D::axis_aligned(10.1, 0.1, 0.0, 1.0, 1.0, 1.8)?,
        BevBox3D::axis_aligned(-9.0, 6.0, 0.0, 1.8, 0.8, 1.7)?,
    ];
    let scores = vec![0.9, 0.85, 0.6, 0.7, 0.65, 0.3];
    let n = boxes.len();
    let qs = QuerySet::new(boxes, scores, Tensor::zeros(&[n, 0]))?;

    let theta = 0.3;
    for (i, nb) in neighbor_sets(&qs.boxes, theta).iter().enumerate() {
        println!("query {i}: score {:.2} neighbors {nb:?}", qs.scores[i]);
    }
    let sel = select_nodes(&qs, theta, 3)?;
    println!("selected {:?}", sel.indices);
    println!("ranking scores {:?}", sel.ranking_scores);
    println!("carried scores {:?}", sel.nodes.scores);
    Ok(())
}
