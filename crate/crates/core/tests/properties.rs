//! Randomized invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgraph::config::Config;
use stgraph::convgru::{convgru_step, init_params as init_gru, ConvGruState};
use stgraph::geometry::{giou_3d, iou_3d, iou_bev, normalize_angle, IouKind};
use stgraph::loss::iou_regularizer;
use stgraph::matching::hungarian;
use stgraph::params::Init;
use stgraph::pipeline::{init_params, run_frames, run_sequence, PipelineState, PE};
use stgraph::selection::{select_nodes, suppress_scores, QuerySet};
use stgraph::sim::simulate;
use stgraph::tqr::{recollect, Provenance};
use stgraph::{BevBox3D, Tensor};

fn arb_box(spread: f64) -> impl Strategy<Value = BevBox3D> {
    (
        -spread..spread,
        -spread..spread,
        -0.5..0.5f64,
        0.5..5.0f64,
        0.5..2.5f64,
        0.5..2.0f64,
        -3.2..3.2f64,
    )
        .prop_map(|(x, y, z, l, w, h, t)| BevBox3D::new(x, y, z, l, w, h, t).unwrap())
}

fn arb_queries(max: usize) -> impl Strategy<Value = QuerySet> {
    prop::collection::vec((arb_box(6.0), 0.0..=1.0f64), 0..max).prop_map(|v| {
        let n = v.len();
        let (boxes, scores) = v.into_iter().unzip();
        QuerySet::new(boxes, scores, Tensor::zeros(&[n, 0])).unwrap()
    })
}

fn arb_cost(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(|(n, m)| prop::collection::vec(-20.0..20.0f64, n * m).prop_map(move |d| Tensor::new(vec![n, m], d).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn overlaps_are_bounded_and_symmetric(a in arb_box(3.0), b in arb_box(3.0)) {
        for f in [iou_bev, iou_3d] {
            let v = f(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, f(&b, &a));
        }
        let g = giou_3d(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert_eq!(g, giou_3d(&b, &a));
        prop_assert!(g <= iou_3d(&a, &b) + 1e-12);
        prop_assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-9);
        prop_assert!((giou_3d(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn angles_normalize_into_half_open_interval(a in -100.0..100.0f64) {
        let n = normalize_angle(a);
        prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        prop_assert!(((a - n) / std::f64::consts::TAU - ((a - n) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn suppression_never_raises_scores(q in arb_queries(40), theta in 0.0..0.9f64) {
        let s = suppress_scores(&q, theta);
        for (new, old) in s.iter().zip(&q.scores) {
            prop_assert!(*new >= 0.0 && new <= old);
        }
    }

    #[test]
    fn selection_has_expected_size(q in arb_queries(40), n_g in 1usize..30) {
        let sel = select_nodes(&q, 0.3, n_g).unwrap();
        prop_assert_eq!(sel.indices.len(), q.len().min(n_g));
        let mut idx = sel.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), sel.indices.len());
        for (k, &i) in sel.indices.iter().enumerate() {
            prop_assert_eq!(sel.nodes.scores[k], q.scores[i]);
        }
        prop_assert!(sel.ranking_scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn hungarian_shifts_with_column_constants(cost in arb_cost(6), col in 0usize..6, k in -5.0..5.0f64) {
        let (n, m) = (cost.rows(), cost.cols());
        let col = col % m;
        let base = hungarian(&cost).unwrap();
        let mut shifted = cost.clone();
        for i in 0..n {
            shifted.data_mut()[i * m + col] += k;
        }
        let moved = hungarian(&shifted).unwrap();
        prop_assert!((moved.total_cost(&shifted) - base.total_cost(&cost) - k).abs() < 1e-9);
    }

    #[test]
    fn square_hungarian_shifts_with_row_constants(cost in arb_cost(6), row in 0usize..6, k in -5.0..5.0f64) {
        let n = cost.rows().min(cost.cols());
        let sq = Tensor::new(vec![n, n], (0..n * n).map(|e| cost.at(e / n, e % n)).collect()).unwrap();
        let row = row % n;
        let mut shifted = sq.clone();
        for j in 0..n {
            shifted.data_mut()[row * n + j] += k;
        }
        let a = hungarian(&sq).unwrap().total_cost(&sq);
        let b = hungarian(&shifted).unwrap().total_cost(&shifted);
        prop_assert!((b - a - k).abs() < 1e-9);
    }

    #[test]
    fn convgru_state_stays_bounded(seed in 0u64..1000, scale in 0.1..5.0f64) {
        let (c, h, w) = (2, 4, 4);
        let params = init_gru(&mut Init::new(seed), "g", c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = |amp: f64| {
            Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
        };
        let mut state = ConvGruState { h: field(scale) };
        for _ in 0..5 {
            let x = field(10.0);
            let bound = state.h.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            state = convgru_step(&state, &x, &params, "g").unwrap().0;
            prop_assert!(state.h.data().iter().all(|v| v.abs() <= bound + 1e-12));
        }
    }

    #[test]
    fn regularizer_falls_as_boxes_separate(b in arb_box(1.0), dir in 0.0..std::f64::consts::TAU, s in 0.2..1.0f64, step in 0.05..1.0f64) {
        let (dx, dy) = (dir.cos(), dir.sin());
        let shifted = |d: f64| BevBox3D::new(b.x() + d * dx, b.y() + d * dy, b.z(), b.l(), b.w(), b.h(), b.heading()).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..12 {
            let r = iou_regularizer(&[b, shifted(k as f64 * step)], &[s, s], IouKind::Bev);
            prop_assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn recollection_keeps_top_proposals(q in arb_queries(40), prev in arb_queries(15), n_p in 1usize..10, n_res in 0usize..8) {
        prop_assume!(q.len() >= n_p + n_res);
        let params = init_params(&Config::default(), 0);
        let init = recollect(&prev, &q, n_p, n_res, &params, PE).unwrap();
        prop_assert_eq!(init.len(), n_p + n_res);
        prop_assert_eq!(init.recollected_count(), prev.len().min(n_res));
        let mut sorted = q.scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let enc: Vec<f64> = init.queries.scores.iter().zip(&init.provenance)
            .filter(|(_, p)| **p == Provenance::Encoder)
            .map(|(s, _)| *s)
            .collect();
        prop_assert_eq!(&enc[..n_p], &sorted[..n_p]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn streaming_matches_batch(seed in 0u64..500, split in 1usize..15) {
        let mut cfg = Config::default();
        cfg.sim.frames = 16;
        let scene = simulate(&cfg.sim, seed).unwrap();
        let params = init_params(&cfg, seed);
        let batch = run_sequence(&scene, &params, &cfg, seed).unwrap();
        let head = run_frames(PipelineState::initial(&cfg), &scene.frames[..split], &params, &cfg, seed).unwrap();
        let resumed = PipelineState::from_json(&head.state.to_json().unwrap()).unwrap();
        let tail = run_frames(resumed, &scene.frames[split..], &params, &cfg, seed).unwrap();
        prop_assert_eq!(&batch.predictions[split..], &tail.predictions[..]);
        prop_assert_eq!(&batch.metrics[..split], &head.metrics[..]);
        prop_assert_eq!(batch.state, tail.state);
    }
}
