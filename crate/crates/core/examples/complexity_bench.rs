//! Wall-clock scaling of sparse graph attention against dense attention,
//! and of parallel score suppression across worker counts.
//!
//! `cargo run --release --example complexity_bench`

use stgraph::bench::{bench_stga, bench_suppress, loglog_slope, BenchMode, StgaBenchOptions};
use stgraph::Result;

fn main() -> Result<()> {
    let sizes = [64, 128, 256, 512];
    let opts = StgaBenchOptions::default();
    for mode in [BenchMode::Stga, BenchMode::Dense] {
        let rows = bench_stga(&sizes, mode, &opts, 0)?;
        for r in &rows {
            println!("{mode:?} n={:4} degree {:.2} MACs {:.3e} {:.3} ms", r.n, r.avg_degree, r.predicted_macs, r.measured_ms);
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.measured_ms).collect();
        println!("{mode:?} log-log slope {:.2}", loglog_slope(&xs, &ys));
    }
    for r in bench_suppress(&[500, 2000], 4, 0.3, 3, 0) {
        println!("suppress n={:4} workers={} {:.3} ms", r.n, r.workers, r.ms);
    }
    Ok(())
}
