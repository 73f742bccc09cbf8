//! Sparse spatial-temporal graph attention next to dense multi-head
//! self-attention on the same nodes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stgraph::bench::random_boxes;
use stgraph::nn::{dense_mhsa, init_mhsa};
use stgraph::params::Init;
use stgraph::stga::{
    build_spatial_graph, build_temporal_edges, init_spatial, init_temporal, op_counter, spatial_attention,
    stga_forward, temporal_cross_attention, StgaConfig,
};
use stgraph::tape::Tape;
use stgraph::Result;

fn main() -> Result<()> {
    let (n, c, heads) = (200, 16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let current = random_boxes(n, 0.3, &mut rng);
    let previous = random_boxes(n, 0.3, &mut rng);
    let cfg = StgaConfig::default();
    let spatial = build_spatial_graph(&current, &cfg);
    let temporal = build_temporal_edges(&current, &previous, &cfg);
    println!(
        "{n} nodes: {} spatial edges (avg degree {:.2}), {} temporal edges",
        spatial.edge_count(),
        spatial.avg_degree(),
        temporal.edge_count()
    );

    let mut init = Init::new(1);
    let mut params = init_spatial(&mut init, "s", c);
    params.extend(init_temporal(&mut init, "u", c))?;
    params.extend(init_mhsa(&mut init, "m", c))?;
    let x = init.uniform(&[n, c], 1);
    let x_prev = init.uniform(&[n, c], 1);

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let (xv, pv) = (tape.leaf(x), tape.leaf(x_prev));
    let s = spatial_attention(&spatial, xv, &bound, "s", &cfg)?;
    let u = temporal_cross_attention(&temporal, xv, pv, &bound, "u", &cfg)?;
    let sparse = stga_forward(s, u)?.to_tensor();
    let dense = dense_mhsa(xv, &bound, "m", heads)?.to_tensor();
    println!("sparse output norm {:.4}, dense output norm {:.4}", sparse.norm(), dense.norm());

    let ops = op_counter(n, n, spatial.avg_degree(), temporal.avg_degree(), c);
    println!(
        "predicted MACs: sparse {:.3e} (spatial {:.3e} temporal {:.3e}), dense {:.3e}",
        ops.stga_total(),
        ops.spatial,
        ops.temporal,
        ops.dense
    );
    Ok(())
}
