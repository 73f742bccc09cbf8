//! Spatial self-attention within a frame's node graph and temporal
//! cross-attention from the previous frame's nodes.
//!
//! Both modules follow the same pattern. For target node `i` with
//! neighbor set `N_i` the logits are `e_ij = a_l . (W v_i) + a_r . (W' u_j)`,
//! the weights are a softmax of `leaky(e_ij)` over `N_i`, and the output is
//! `v_i + act(sum_j w_ij W_msg u_j)`. Nodes without neighbors pass through
//! unchanged. The graph embedding is the sum of the two module outputs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_distance_bev, BevBox3D};
use crate::nn::Activation;
use crate::params::{Bound, Init, ParamStore};
use crate::tape::{neighbor_attention, weighted_gather, Var};
use crate::tensor::masked_softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeightMode {
    /// Learned attention from node features.
    #[default]
    Feature,
    /// Softmax of negative center distance.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgaConfig {
    pub d_s: f64,
    pub d_u: f64,
    pub max_neighbors: Option<usize>,
    pub edge_weight_mode: EdgeWeightMode,
    pub tau: f64,
    pub activation: Activation,
    pub leaky_slope: f64,
}

impl Default for StgaConfig {
    fn default() -> Self {
        Self {
            d_s: 2.0,
            d_u: 2.0,
            max_neighbors: None,
            edge_weight_mode: EdgeWeightMode::Feature,
            tau: 1.0,
            activation: Activation::Elu,
            leaky_slope: 0.2,
        }
    }
}

impl StgaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_s > 0.0 && self.d_u > 0.0 && self.tau > 0.0) {
            return Err(Error::Config(format!(
                "d_s, d_u and tau must be positive (got {}, {}, {})",
                self.d_s, self.d_u, self.tau
            )));
        }
        if self.max_neighbors == Some(0) {
            return Err(Error::Config("max_neighbors must be positive".into()));
        }
        Ok(())
    }
}

/// Directed neighbor lists from target nodes into source nodes. For a
/// spatial graph source and target are the same node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub neighbors: Vec<Vec<usize>>,
    pub target_boxes: Vec<BevBox3D>,
    pub source_boxes: Vec<BevBox3D>,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn avg_degree(&self) -> f64 {
        if self.neighbors.is_empty() {
            0.0
        } else {
            self.edge_count() as f64 / self.node_count() as f64
        }
    }

    /// 1 for nodes with at least one neighbor, else 0.
    pub fn connected_mask(&self) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|n| if n.is_empty() { 0.0 } else { 1.0 })
            .collect()
    }
}

/// Links each target to every source whose center lies closer than
/// `radius`, keeping at most `cap` nearest. Uses a uniform grid so the cost
/// stays linear at fixed density.
fn radius_links(
    targets: &[BevBox3D],
    sources: &[BevBox3D],
    radius: f64,
    cap: Option<usize>,
    exclude_self: bool,
) -> Vec<Vec<usize>> {
    let cell = |b: &BevBox3D| ((b.x() / radius).floor() as i64, (b.y() / radius).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, b) in sources.iter().enumerate() {
        grid.entry(cell(b)).or_default().push(j);
    }
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (cx, cy) = cell(t);
            let mut found: Vec<(f64, usize)> = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in bucket {
                            if exclude_self && j == i {
                                continue;
                            }
                            let d = center_distance_bev(t, &sources[j]);
                            if d < radius {
                                found.push((d, j));
                            }
                        }
                    }
                }
            }
            if let Some(k) = cap {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
            }
            let mut idx: Vec<usize> = found.into_iter().map(|(_, j)| j).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Edge `(i, j)`, `i != j`, iff the BEV center distance is below `d_s`.
pub fn build_spatial_graph(boxes: &[BevBox3D], cfg: &StgaConfig) -> Graph {
    Graph {
        neighbors: radius_links(boxes, boxes, cfg.d_s, cfg.max_neighbors, true),
        target_boxes: boxes.to_vec(),
        source_boxes: boxes.to_vec(),
    }
}

/// Target `i` links to source `j` iff their BEV center distance is below `d_u`.
pub fn build_temporal_edges(target: &[BevBox3D], source: &[BevBox3D], cfg: &StgaConfig) -> Graph {
    Graph {
        neighbors: radius_links(target, source, cfg.d_u, cfg.max_neighbors, false),
        target_boxes: target.to_vec(),
        source_boxes: source.to_vec(),
    }
}

/// Per-edge `softmax(-d_ij / tau)` over each neighbor list.
pub fn distance_edge_weights(graph: &Graph, tau: f64) -> Vec<Vec<f64>> {
    graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return vec![];
            }
            let logits: Vec<f64> = nb
                .iter()
                .map(|&j| -center_distance_bev(&graph.target_boxes[i], &graph.source_boxes[j]) / tau)
                .collect();
            masked_softmax(&logits, &vec![true; nb.len()]).expect("non-empty")
        })
        .collect()
}

/// Feature-mode attention weights, for inspection and tests.
pub fn attention_weights(left: &[f64], right: &[f64], graph: &Graph, slope: f64) -> Vec<Vec<f64>> {
    graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return vec![];
            }
            let z: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    let e = left[i] + right[j];
                    if e > 0.0 {
                        e
                    } else {
                        slope * e
                    }
                })
                .collect();
            masked_softmax(&z, &vec![true; z.len()]).expect("non-empty")
        })
        .collect()
}

/// Spatial parameters `{p}.w1 [c,c]`, `{p}.a_l [c,1]`, `{p}.a_r [c,1]`, `{p}.w2 [c,c]`.
pub fn init_spatial(init: &mut Init, prefix: &str, c: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(format!("{prefix}.w1"), init.weight(c, c)).expect("fresh");
    p.insert(format!("{prefix}.a_l"), init.weight(c, 1)).expect("fresh");
    p.insert(format!("{prefix}.a_r"), init.weight(c, 1)).expect("fresh");
    p.insert(format!("{prefix}.w2"), init.weight(c, c)).expect("fresh");
    p
}

/// Temporal parameters `{p}.w_tgt`, `{p}.w_src`, `{p}.w1` (`[c,c]`) and `{p}.a_l`, `{p}.a_r` (`[c,1]`).
pub fn init_temporal(init: &mut Init, prefix: &str, c: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(format!("{prefix}.w_tgt"), init.weight(c, c)).expect("fresh");
    p.insert(format!("{prefix}.w_src"), init.weight(c, c)).expect("fresh");
    p.insert(format!("{prefix}.a_l"), init.weight(c, 1)).expect("fresh");
    p.insert(format!("{prefix}.a_r"), init.weight(c, 1)).expect("fresh");
    p.insert(format!("{prefix}.w1"), init.weight(c, c)).expect("fresh");
    p
}

fn check_rows(graph: &Graph, target: &Var<'_>, source: &Var<'_>) -> Result<()> {
    let ts = target.shape();
    let ss = source.shape();
    if ts.len() != 2
        || ss.len() != 2
        || ts[0] != graph.node_count()
        || ss[0] != graph.source_boxes.len()
        || ts[1] != ss[1]
    {
        return Err(Error::Shape {
            op: "graph_attention",
            lhs: ts,
            rhs: ss,
        });
    }
    Ok(())
}

fn aggregate<'t>(
    graph: &Graph,
    target: Var<'t>,
    left_proj: Var<'t>,
    right_proj: Var<'t>,
    message: Var<'t>,
    params: &Bound<'t>,
    prefix: &str,
    cfg: &StgaConfig,
) -> Result<Var<'t>> {
    let agg = match cfg.edge_weight_mode {
        EdgeWeightMode::Feature => {
            let l = left_proj.matmul(params.get(&format!("{prefix}.a_l"))?)?;
            let r = right_proj.matmul(params.get(&format!("{prefix}.a_r"))?)?;
            neighbor_attention(l, r, message, &graph.neighbors, cfg.leaky_slope)?
        }
        EdgeWeightMode::Distance => {
            let w = distance_edge_weights(graph, cfg.tau);
            weighted_gather(message, &graph.neighbors, &w)?
        }
    };
    let update = cfg
        .activation
        .apply(agg, cfg.leaky_slope)
        .scale_rows(&graph.connected_mask())?;
    target.add(update)
}

/// Self-attention over a spatial graph. `features: [n, c]`.
pub fn spatial_attention<'t>(
    graph: &Graph,
    features: Var<'t>,
    params: &Bound<'t>,
    prefix: &str,
    cfg: &StgaConfig,
) -> Result<Var<'t>> {
    check_rows(graph, &features, &features)?;
    if graph.edge_count() == 0 {
        return Ok(features);
    }
    let proj = features.matmul(params.get(&format!("{prefix}.w1"))?)?;
    let msg = features.matmul(params.get(&format!("{prefix}.w2"))?)?;
    aggregate(graph, features, proj, proj, msg, params, prefix, cfg)
}

/// Cross-attention from source (previous frame) nodes into target nodes.
pub fn temporal_cross_attention<'t>(
    graph: &Graph,
    target: Var<'t>,
    source: Var<'t>,
    params: &Bound<'t>,
    prefix: &str,
    cfg: &StgaConfig,
) -> Result<Var<'t>> {
    check_rows(graph, &target, &source)?;
    if graph.edge_count() == 0 {
        return Ok(target);
    }
    let tp = target.matmul(params.get(&format!("{prefix}.w_tgt"))?)?;
    let sp = source.matmul(params.get(&format!("{prefix}.w_src"))?)?;
    let msg = source.matmul(params.get(&format!("{prefix}.w1"))?)?;
    aggregate(graph, target, tp, sp, msg, params, prefix, cfg)
}

/// Graph embedding: elementwise sum of the two attention outputs.
pub fn stga_forward<'t>(spatial_out: Var<'t>, temporal_out: Var<'t>) -> Result<Var<'t>> {
    spatial_out.add(temporal_out)
}

/// Predicted multiply-accumulate counts per phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpCounts {
    pub selection: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub dense: f64,
}

impl OpCounts {
    pub fn stga_total(&self) -> f64 {
        self.selection + self.spatial + self.temporal
    }
}

/// Closed-form counts: selection `n_q^2`, spatial `n_g * deg_s * c`,
/// temporal `n_g * deg_u * c`, dense self-attention `n_q^2 * c`.
pub fn op_counter(n_q: usize, n_g: usize, avg_neighbors_s: f64, avg_neighbors_u: f64, c: usize) -> OpCounts {
    let nq = n_q as f64;
    let ng = n_g as f64;
    let c = c as f64;
    OpCounts {
        selection: nq * nq,
        spatial: ng * avg_neighbors_s * c,
        temporal: ng * avg_neighbors_u * c,
        dense: nq * nq * c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn at(x: f64, y: f64) -> BevBox3D {
        BevBox3D::axis_aligned(x, y, 0.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn far_apart_boxes_make_an_edgeless_graph() {
        let boxes: Vec<_> = (0..4).map(|i| at(3.0 * i as f64, 0.0)).collect();
        let g = build_spatial_graph(&boxes, &StgaConfig::default());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn one_meter_pair_is_mutual() {
        let g = build_spatial_graph(&[at(0.0, 0.0), at(1.0, 0.0)], &StgaConfig::default());
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn neighbor_cap_keeps_nearest() {
        let boxes = vec![at(0.0, 0.0), at(1.5, 0.0), at(0.5, 0.0), at(-1.0, 0.0)];
        let cfg = StgaConfig {
            max_neighbors: Some(2),
            ..Default::default()
        };
        let g = build_spatial_graph(&boxes, &cfg);
        assert_eq!(g.neighbors[0], vec![2, 3]);
    }

    #[test]
    fn temporal_edges() {
        let cfg = StgaConfig::default();
        let g = build_temporal_edges(&[at(0.0, 0.0)], &[], &cfg);
        assert_eq!(g.neighbors, vec![Vec::<usize>::new()]);
        let g = build_temporal_edges(&[at(0.0, 0.0), at(9.0, 9.0)], &[at(9.1, 9.0), at(0.2, 0.0)], &cfg);
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn distance_weights() {
        let g = Graph {
            neighbors: vec![vec![0, 1]],
            target_boxes: vec![at(0.0, 0.0)],
            source_boxes: vec![at(1.0, 0.0), at(2.0, 0.0)],
        };
        let w = distance_edge_weights(&g, 1.0);
        let z = (-1f64).exp() + (-2f64).exp();
        assert!((w[0][0] - (-1f64).exp() / z).abs() < 1e-15);
        assert!((w[0][1] - (-2f64).exp() / z).abs() < 1e-15);
        let wide = distance_edge_weights(&g, 1e12);
        assert!((wide[0][0] - 0.5).abs() < 1e-9);
        let eq = Graph {
            neighbors: vec![vec![0, 1]],
            target_boxes: vec![at(0.0, 0.0)],
            source_boxes: vec![at(1.0, 0.0), at(0.0, 1.0)],
        };
        assert_eq!(distance_edge_weights(&eq, 1.0)[0], vec![0.5, 0.5]);
    }

    #[test]
    fn edgeless_graph_is_identity() {
        let tape = Tape::new();
        let mut init = Init::new(1);
        let p = init_spatial(&mut init, "s", 4);
        let bound = p.bind(&tape);
        let boxes: Vec<_> = (0..3).map(|i| at(5.0 * i as f64, 0.0)).collect();
        let g = build_spatial_graph(&boxes, &StgaConfig::default());
        let x = tape.leaf(init.weight(3, 4));
        let y = spatial_attention(&g, x, &bound, "s", &StgaConfig::default()).unwrap();
        assert_eq!(y.to_tensor(), x.to_tensor());
    }

    #[test]
    fn sum_of_streams() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = tape.leaf(Tensor::zeros(&[1, 2]));
        assert_eq!(stga_forward(z, a).unwrap().to_tensor(), a.to_tensor());
        assert_eq!(stga_forward(a, a).unwrap().value().data(), &[2.0, 4.0]);
    }

    #[test]
    fn op_counts_scale() {
        let a = op_counter(100, 50, 4.0, 3.0, 32);
        let b = op_counter(200, 50, 4.0, 3.0, 32);
        assert_eq!(b.selection, 4.0 * a.selection);
        let c2 = op_counter(100, 50, 4.0, 3.0, 64);
        assert_eq!(c2.spatial, 2.0 * a.spatial);
        assert_eq!(c2.temporal, 2.0 * a.temporal);
        assert_eq!(c2.selection, a.selection);
        assert!(a.stga_total() < a.dense);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = StgaConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
