//! Finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::convgru;
use crate::error::{Error, Result};
use crate::geometry::BevBox3D;
use crate::head;
use crate::loss::{focal_from_logit, huber_box, match_cost, total_loss, GroundTruth, LossConfig, Predictions};
use crate::matching::assign;
use crate::nn::{dense_mhsa, init_mhsa, linear};
use crate::params::{Bound, Init, ParamStore};
use crate::stga::{
    build_spatial_graph, build_temporal_edges, init_spatial, init_temporal, spatial_attention, stga_forward,
    temporal_cross_attention, StgaConfig,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tqr;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / (|a| + |n|)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn scalar_of(v: Var<'_>) -> Result<f64> {
    let t = v.to_tensor();
    if t.len() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            lhs: t.shape().to_vec(),
            rhs: vec![1],
        });
    }
    Ok(t.item())
}

/// Compares reverse-mode gradients of the scalar `f` w.r.t. the named
/// parameters (all when `names` is `None`) with central differences.
pub fn grad_check<F>(params: &ParamStore, names: Option<&[&str]>, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let selected: Vec<String> = match names {
        Some(n) => n.iter().map(|s| s.to_string()).collect(),
        None => params.names().map(str::to_string).collect(),
    };
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = f(&tape, &bound)?;
    scalar_of(out)?;
    tape.check_finite()?;
    let grads = bound.gradients(&tape.backward(out));

    let eval = |p: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let v = scalar_of(f(&tape, &bound)?)?;
        tape.check_finite()?;
        Ok(v)
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = params.clone();
    for name in &selected {
        let base = params.get(name)?.clone();
        analytic.extend_from_slice(grads[name].data());
        for k in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[k] += FD_STEP;
            work.set(name, t.clone())?;
            let hi = eval(&work)?;
            t.data_mut()[k] -= 2.0 * FD_STEP;
            work.set(name, t)?;
            let lo = eval(&work)?;
            numeric.push((hi - lo) / (2.0 * FD_STEP));
        }
        work.set(name, base)?;
    }
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Values bounded away from zero, for ops with a kink there.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_tensor(rng, shape, 2.0).map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v })
}

fn store(entries: Vec<(&str, Tensor)>) -> ParamStore {
    let mut p = ParamStore::new();
    for (k, v) in entries {
        p.insert(k, v).expect("unique");
    }
    p
}

fn local_boxes(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<BevBox3D> {
    (0..n)
        .map(|_| {
            BevBox3D::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(0.0..1.0),
                rng.random_range(1.0..4.0),
                rng.random_range(0.5..2.0),
                rng.random_range(1.0..2.0),
                rng.random_range(-3.0..3.0),
            )
            .expect("box")
        })
        .collect()
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn suites() -> Vec<(&'static str, f64, Case)> {
    let mut out: Vec<(&'static str, f64, Case)> = Vec::new();
    out.push((
        "linear",
        1e-5,
        Box::new(|rng| {
            let p = store(vec![
                ("x", rand_tensor(rng, &[4, 3], 1.0)),
                ("w", rand_tensor(rng, &[3, 2], 1.0)),
                ("b", rand_tensor(rng, &[2], 1.0)),
            ]);
            let r = rand_tensor(rng, &[4, 2], 1.0);
            grad_check(&p, None, |_, b| {
                Ok(linear(b.get("x")?, b.get("w")?, Some(b.get("b")?))?.mul_const(&r)?.sum())
            })
        }),
    ));
    for act in ["sigmoid", "tanh", "leaky_relu", "elu"] {
        out.push((
            act,
            1e-5,
            Box::new(move |rng| {
                let p = store(vec![("x", off_kink(rng, &[5, 4]))]);
                let r = rand_tensor(rng, &[5, 4], 1.0);
                grad_check(&p, None, |_, b| {
                    let x = b.get("x")?;
                    let y = match act {
                        "sigmoid" => x.sigmoid(),
                        "tanh" => x.tanh(),
                        "leaky_relu" => x.leaky_relu(0.2),
                        _ => x.elu(),
                    };
                    Ok(y.mul_const(&r)?.sum())
                })
            }),
        ));
    }
    out.push((
        "masked_softmax",
        1e-5,
        Box::new(|rng| {
            let n = 6;
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            mask[rng.random_range(0..n)] = true;
            let p = store(vec![("z", rand_tensor(rng, &[n], 3.0))]);
            let r = rand_tensor(rng, &[n], 1.0);
            grad_check(&p, None, |_, b| Ok(b.get("z")?.masked_softmax(&mask)?.mul_const(&r)?.sum()))
        }),
    ));
    out.push((
        "conv2d_same",
        1e-5,
        Box::new(|rng| {
            let p = store(vec![
                ("x", rand_tensor(rng, &[2, 5, 5], 1.0)),
                ("k", rand_tensor(rng, &[2, 2, 3, 3], 1.0)),
                ("b", rand_tensor(rng, &[2], 1.0)),
            ]);
            let r = rand_tensor(rng, &[2, 5, 5], 1.0);
            grad_check(&p, None, |_, b| {
                Ok(crate::tape::conv2d_same(b.get("x")?, b.get("k")?, b.get("b")?)?
                    .mul_const(&r)?
                    .sum())
            })
        }),
    ));
    out.push((
        "dense_mhsa",
        1e-4,
        Box::new(|rng| {
            let mut init = Init::new(rng.random());
            let mut p = init_mhsa(&mut init, "m", 8);
            p.insert("x", rand_tensor(rng, &[4, 8], 1.0))?;
            let r = rand_tensor(rng, &[4, 8], 1.0);
            grad_check(&p, None, |_, b| Ok(dense_mhsa(b.get("x")?, b, "m", 2)?.mul_const(&r)?.sum()))
        }),
    ));
    out.push((
        "convgru_step",
        1e-4,
        Box::new(|rng| {
            let mut init = Init::new(rng.random());
            let mut p = convgru::init_params(&mut init, "g", 2);
            p.insert("h", rand_tensor(rng, &[2, 4, 4], 1.0))?;
            p.insert("x", rand_tensor(rng, &[2, 4, 4], 1.0))?;
            let r = rand_tensor(rng, &[2, 4, 4], 1.0);
            grad_check(&p, None, |_, b| {
                let (h, _, _, _) = convgru::step_var(b.get("h")?, b.get("x")?, b, "g")?;
                Ok(h.mul_const(&r)?.sum())
            })
        }),
    ));
    out.push((
        "convgru_sequence",
        1e-4,
        Box::new(|rng| {
            let mut init = Init::new(rng.random());
            let mut p = convgru::init_params(&mut init, "g", 2);
            for k in 0..3 {
                p.insert(format!("x{k}"), rand_tensor(rng, &[2, 3, 3], 1.0))?;
            }
            let names: Vec<String> = p.names().filter(|n| n.starts_with("g.")).map(str::to_string).collect();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            grad_check(&p, Some(&names), |tape, b| {
                let seq = [b.get("x0")?, b.get("x1")?, b.get("x2")?];
                let h0 = tape.leaf(Tensor::zeros(&[2, 3, 3]));
                let hs = convgru::run_var(h0, &seq, b, "g")?;
                Ok(hs[2].square().sum())
            })
        }),
    ));
    out.push((
        "spatial_attention",
        1e-4,
        Box::new(|rng| {
            let cfg = StgaConfig::default();
            let boxes = local_boxes(rng, 6, 1.5);
            let g = build_spatial_graph(&boxes, &cfg);
            let mut init = Init::new(rng.random());
            let mut p = init_spatial(&mut init, "s", 4);
            p.insert("v", rand_tensor(rng, &[6, 4], 1.0))?;
            let r = rand_tensor(rng, &[6, 4], 1.0);
            grad_check(&p, None, |_, b| {
                Ok(spatial_attention(&g, b.get("v")?, b, "s", &cfg)?.mul_const(&r)?.sum())
            })
        }),
    ));
    out.push((
        "temporal_attention",
        1e-4,
        Box::new(|rng| {
            let cfg = StgaConfig::default();
            let tb = local_boxes(rng, 5, 1.5);
            let sb = local_boxes(rng, 4, 1.5);
            let g = build_temporal_edges(&tb, &sb, &cfg);
            let mut init = Init::new(rng.random());
            let mut p = init_temporal(&mut init, "u", 4);
            p.insert("v", rand_tensor(rng, &[5, 4], 1.0))?;
            p.insert("src", rand_tensor(rng, &[4, 4], 1.0))?;
            let r = rand_tensor(rng, &[5, 4], 1.0);
            grad_check(&p, None, |_, b| {
                Ok(temporal_cross_attention(&g, b.get("v")?, b.get("src")?, b, "u", &cfg)?
                    .mul_const(&r)?
                    .sum())
            })
        }),
    ));
    out.push((
        "stga_forward",
        1e-4,
        Box::new(|rng| {
            let cfg = StgaConfig::default();
            let cur = local_boxes(rng, 6, 1.5);
            let prev = local_boxes(rng, 5, 1.5);
            let sg = build_spatial_graph(&cur, &cfg);
            let tg = build_temporal_edges(&cur, &prev, &cfg);
            let mut init = Init::new(rng.random());
            let mut p = init_spatial(&mut init, "s", 4);
            p.extend(init_temporal(&mut init, "u", 4))?;
            let v = rand_tensor(rng, &[6, 4], 1.0);
            let src = rand_tensor(rng, &[5, 4], 1.0);
            grad_check(&p, None, |tape, b| {
                let v = tape.leaf(v.clone());
                let s = spatial_attention(&sg, v, b, "s", &cfg)?;
                let t = temporal_cross_attention(&tg, v, tape.leaf(src.clone()), b, "u", &cfg)?;
                Ok(stga_forward(s, t)?.square().sum())
            })
        }),
    ));
    out.push((
        "position_encode",
        1e-5,
        Box::new(|rng| {
            let mut init = Init::new(rng.random());
            let p = tqr::init_pe(&mut init, "pe", 6);
            let boxes = local_boxes(rng, 3, 20.0);
            let scores: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let r = rand_tensor(rng, &[3, 6], 1.0);
            grad_check(&p, None, |tape, b| {
                Ok(tqr::position_encode_recorded(tape, &boxes, &scores, b, "pe")?
                    .mul_const(&r)?
                    .sum())
            })
        }),
    ));
    out.push((
        "graph_head",
        1e-4,
        Box::new(|rng| {
            let mut init = Init::new(rng.random());
            let mut p = head::init_head(&mut init, "h", 6);
            p.set("h.w3", rand_tensor(rng, &[6, head::HEAD_OUT], 0.5))?;
            p.set("h.b3", rand_tensor(rng, &[head::HEAD_OUT], 0.5))?;
            let x = rand_tensor(rng, &[4, 6], 1.0);
            let r = rand_tensor(rng, &[4, head::HEAD_OUT], 1.0);
            grad_check(&p, None, |tape, b| {
                Ok(head::head_forward(tape.leaf(x.clone()), b, "h")?.mul_const(&r)?.sum())
            })
        }),
    ));
    out.push((
        "focal",
        1e-5,
        Box::new(|rng| {
            let mut a = Vec::new();
            let mut n = Vec::new();
            for _ in 0..8 {
                let z = rng.random_range(-4.0..4.0);
                let pos = rng.random::<bool>();
                a.push(focal_from_logit(z, pos, 0.25, 2.0).1);
                let f = |z| focal_from_logit(z, pos, 0.25, 2.0).0;
                n.push((f(z + FD_STEP) - f(z - FD_STEP)) / (2.0 * FD_STEP));
            }
            Ok(relative_error(&a, &n))
        }),
    ));
    out.push((
        "huber",
        1e-5,
        Box::new(|rng| {
            let p = local_boxes(rng, 1, 2.0)[0];
            let g = local_boxes(rng, 1, 2.0)[0];
            let (_, a) = huber_box(&p, &g, 1.0);
            let base = p.to_array();
            let mut n = Vec::new();
            for k in 0..7 {
                let (mut hi, mut lo) = (base, base);
                hi[k] += FD_STEP;
                lo[k] -= FD_STEP;
                let f = |q: [f64; 7]| huber_box(&BevBox3D::from_array(q).expect("box"), &g, 1.0).0;
                n.push((f(hi) - f(lo)) / (2.0 * FD_STEP));
            }
            Ok(relative_error(&a, &n))
        }),
    ));
    out.push((
        "total_loss_boxes",
        1e-3,
        Box::new(|rng| {
            let gt = GroundTruth {
                boxes: local_boxes(rng, 2, 2.0),
                classes: vec![rng.random_range(0..3), rng.random_range(0..3)],
            };
            let boxes: Vec<BevBox3D> = gt
                .boxes
                .iter()
                .chain(gt.boxes.iter())
                .map(|b| b.transformed(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 0.1))
                .collect();
            let pred = Predictions {
                boxes,
                logits: rand_tensor(rng, &[4, 3], 2.0),
            };
            let cfg = LossConfig::default();
            let a = assign(&match_cost(&pred, &gt, &cfg.weights))?;
            let out = total_loss(&pred, &gt, &a, &cfg);
            let mut an = Vec::new();
            let mut num = Vec::new();
            for i in 0..pred.len() {
                an.extend_from_slice(&out.grad_boxes[i]);
                let base = pred.boxes[i].to_array();
                for k in 0..7 {
                    let f = |d: f64| {
                        let mut q = base;
                        q[k] += d;
                        let mut p2 = pred.clone();
                        p2.boxes[i] = BevBox3D::from_array(q).expect("box");
                        total_loss(&p2, &gt, &a, &cfg).breakdown.total
                    };
                    num.push((f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP));
                }
            }
            Ok(relative_error(&an, &num))
        }),
    ));
    out
}

pub fn suite_names() -> Vec<&'static str> {
    suites().into_iter().map(|(n, _, _)| n).collect()
}

/// Runs every suite on `cases` seeded cases.
pub fn run_all(cases: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut results = Vec::new();
    for (k, (name, tol, case)) in suites().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for c in 0..cases {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((k * 10_000 + c) as u64);
            worst = worst.max(case(&mut rng)?);
        }
        results.push(SuiteResult {
            suite: name.to_string(),
            cases,
            max_rel_err: worst,
            tolerance: tol,
            passed: worst < tol,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = store(vec![("x", Tensor::vector(vec![0.3, -1.2, 2.0]))]);
        let err = grad_check(&p, None, |_, b| Ok(b.get("x")?.square().sum())).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn linear_tanh_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = store(vec![
            ("x", rand_tensor(&mut rng, &[3, 4], 1.0)),
            ("w", rand_tensor(&mut rng, &[4, 2], 1.0)),
        ]);
        let err = grad_check(&p, None, |_, b| Ok(linear(b.get("x")?, b.get("w")?, None)?.tanh().sum())).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let p = store(vec![("x", Tensor::vector(vec![1.0, 2.0]))]);
        assert!(grad_check(&p, None, |_, b| b.get("x")).is_err());
    }

    #[test]
    fn non_finite_value_names_the_op() {
        let p = store(vec![("x", Tensor::vector(vec![800.0]))]);
        let err = grad_check(&p, None, |_, b| Ok(b.get("x")?.exp().sum())).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "exp" }), "{err:?}");
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
