//! Timing harnesses for score suppression and graph attention.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BevBox3D;
use crate::nn::{dense_mhsa, init_mhsa};
use crate::params::Init;
use crate::selection::{suppress_scores_parallel, QuerySet};
use crate::stga::{
    build_spatial_graph, build_temporal_edges, init_spatial, init_temporal, op_counter, spatial_attention,
    stga_forward, temporal_cross_attention, StgaConfig,
};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `n` boxes spread over a square sized for `density` boxes per m²,
/// with vehicle-like footprints and random headings.
pub fn random_boxes(n: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<BevBox3D> {
    let half = (n as f64 / density).sqrt() / 2.0;
    (0..n)
        .map(|_| {
            BevBox3D::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                0.8,
                rng.random_range(3.5..5.0),
                rng.random_range(1.6..2.2),
                1.6,
                rng.random_range(-3.1..3.1),
            )
            .expect("box")
        })
        .collect()
}

/// Proposal-like query set: clusters of overlapping boxes around random
/// objects, scores in `(0, 1)`.
pub fn clustered_queries(n: usize, rng: &mut ChaCha8Rng) -> QuerySet {
    let objects = (n / 4).max(1);
    let centers = random_boxes(objects, 0.02, rng);
    let mut boxes = Vec::with_capacity(n);
    for k in 0..n {
        let c = centers[k % objects];
        boxes.push(c.transformed(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.1..0.1)));
    }
    let scores = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    QuerySet::new(boxes, scores, Tensor::zeros(&[n, 0])).expect("consistent")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressRow {
    pub n: usize,
    pub workers: usize,
    pub ms: f64,
}

fn time_min<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(f());
        best = best.min(t0.elapsed().as_secs_f64() * 1e3);
    }
    best
}

pub fn bench_suppress(ns: &[usize], max_workers: usize, theta: f64, repeats: usize, seed: u64) -> Vec<SuppressRow> {
    let mut rows = Vec::new();
    for &n in ns {
        let qs = clustered_queries(n, &mut ChaCha8Rng::seed_from_u64(seed ^ n as u64));
        for workers in 1..=max_workers.max(1) {
            let ms = time_min(repeats, || suppress_scores_parallel(&qs, theta, workers));
            rows.push(SuppressRow { n, workers, ms });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Stga,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgaBenchOptions {
    pub c: usize,
    pub heads: usize,
    /// Nodes per m²; fixes the average degree across sizes.
    pub density: f64,
    pub repeats: usize,
}

impl Default for StgaBenchOptions {
    fn default() -> Self {
        Self {
            c: 16,
            heads: 8,
            density: 0.3,
            repeats: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgaRow {
    pub n: usize,
    pub avg_degree: f64,
    pub predicted_macs: f64,
    pub measured_ms: f64,
}

/// Times one forward pass per size. STGA covers graph construction plus
/// spatial and temporal attention; dense covers multi-head self-attention
/// over the same nodes.
pub fn bench_stga(ns: &[usize], mode: BenchMode, opts: &StgaBenchOptions, seed: u64) -> Result<Vec<StgaRow>> {
    let cfg = StgaConfig::default();
    let mut rows = Vec::new();
    for &n in ns {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).rotate_left(17));
        let cur = random_boxes(n, opts.density, &mut rng);
        let prev: Vec<BevBox3D> = cur
            .iter()
            .map(|b| b.transformed(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0))
            .collect();
        let mut init = Init::new(seed);
        let x = init.uniform(&[n, opts.c], 1);
        let src = init.uniform(&[n, opts.c], 1);
        let sg = build_spatial_graph(&cur, &cfg);
        let tg = build_temporal_edges(&cur, &prev, &cfg);
        let (deg_s, deg_u) = (sg.avg_degree(), tg.avg_degree());
        let counts = op_counter(n, n, deg_s, deg_u, opts.c);
        let (predicted, ms, degree) = match mode {
            BenchMode::Stga => {
                let mut params = init_spatial(&mut init, "s", opts.c);
                params.extend(init_temporal(&mut init, "u", opts.c))?;
                let ms = time_min(opts.repeats, || -> Result<Tensor> {
                    let tape = Tape::new();
                    let b = params.bind(&tape);
                    let sg = build_spatial_graph(&cur, &cfg);
                    let tg = build_temporal_edges(&cur, &prev, &cfg);
                    let v = tape.leaf(x.clone());
                    let s = spatial_attention(&sg, v, &b, "s", &cfg)?;
                    let t = temporal_cross_attention(&tg, v, tape.leaf(src.clone()), &b, "u", &cfg)?;
                    Ok(stga_forward(s, t)?.to_tensor())
                });
                (counts.spatial + counts.temporal, ms, deg_s)
            }
            BenchMode::Dense => {
                let params = init_mhsa(&mut init, "m", opts.c);
                let heads = opts.heads;
                let ms = time_min(opts.repeats, || -> Result<Tensor> {
                    let tape = Tape::new();
                    let b = params.bind(&tape);
                    Ok(dense_mhsa(tape.leaf(x.clone()), &b, "m", heads)?.to_tensor())
                });
                (counts.dense, ms, (n - 1) as f64)
            }
        };
        rows.push(StgaRow {
            n,
            avg_degree: degree,
            predicted_macs: predicted,
            measured_ms: ms,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

pub fn suppress_csv(rows: &[SuppressRow]) -> String {
    let mut s = String::from("n,workers,ms\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4}\n", r.n, r.workers, r.ms));
    }
    s
}

pub fn stga_csv(rows: &[StgaRow]) -> String {
    let mut s = String::from("n,avg_degree,predicted_macs,measured_ms\n");
    for r in rows {
        s.push_str(&format!("{},{:.3},{:.0},{:.4}\n", r.n, r.avg_degree, r.predicted_macs, r.measured_ms));
    }
    s
}
