//! Streaming a simulated scene frame by frame, saving the carried state
//! halfway and resuming from the saved copy.

use stgraph::config::Config;
use stgraph::pipeline::{init_params, run_frame, run_frames, PipelineState};
use stgraph::sim::simulate;
use stgraph::Result;

fn main() -> Result<()> {
    let cfg = Config::default();
    let seed = 3;
    let scene = simulate(&cfg.sim, seed)?;
    let params = init_params(&cfg, seed);

    let mut state = PipelineState::initial(&cfg);
    let mut saved = None;
    for frame in &scene.frames {
        let out = run_frame(&state, frame, &params, &cfg, seed)?;
        let m = &out.metrics;
        println!(
            "t={:2} gt={:2} queries={} (recollected {:2}) nodes={} query recall@0.7 {:.2} edges s/t {}/{}",
            m.t, m.n_gt, m.n_queries, m.n_recollected, m.n_nodes, m.query_recall_07, m.spatial_edges, m.temporal_edges
        );
        state = out.state;
        if state.t == scene.len() / 2 {
            saved = Some(state.to_json()?);
        }
    }

    let resumed = PipelineState::from_json(&saved.expect("scene has frames"))?;
    let tail = run_frames(resumed, &scene.frames[scene.len() / 2..], &params, &cfg, seed)?;
    println!("resumed run ends in the same state: {}", tail.state == state);
    Ok(())
}
