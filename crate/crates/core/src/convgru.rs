//! Convolutional GRU over `[C, H, W]` feature maps.
//!
//! ```text
//! R  = sigmoid(conv(H', U_r) + conv(X, W_r) + b_r)
//! Z  = sigmoid(conv(H', U_z) + conv(X, W_z) + b_z)
//! H~ = tanh(conv(R * H', U_h) + conv(X, W_h) + b_h)
//! H  = Z * H' + (1 - Z) * H~
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamStore};
use crate::tape::{conv2d_same, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvGruState {
    pub h: Tensor,
}

impl ConvGruState {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            h: Tensor::zeros(&[channels, height, width]),
        }
    }
}

/// Gate values of one step, kept for inspection.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub reset: Tensor,
    pub update: Tensor,
    pub candidate: Tensor,
}

/// Registers `{prefix}.u_*`, `{prefix}.w_*` (`[c, c, 3, 3]`) and `{prefix}.b_*` (`[c]`).
pub fn init_params(init: &mut Init, prefix: &str, channels: usize) -> ParamStore {
    let mut p = ParamStore::new();
    let fan_in = channels * 9;
    for gate in ["r", "z", "h"] {
        p.insert(
            format!("{prefix}.u_{gate}"),
            init.uniform(&[channels, channels, 3, 3], fan_in),
        )
        .expect("fresh");
        p.insert(
            format!("{prefix}.w_{gate}"),
            init.uniform(&[channels, channels, 3, 3], fan_in),
        )
        .expect("fresh");
        p.insert(format!("{prefix}.b_{gate}"), init.uniform(&[channels], fan_in))
            .expect("fresh");
    }
    p
}

/// Same layout as [`init_params`] with every entry zero.
pub fn zero_params(prefix: &str, channels: usize) -> ParamStore {
    let mut p = ParamStore::new();
    for gate in ["r", "z", "h"] {
        p.insert(format!("{prefix}.u_{gate}"), Tensor::zeros(&[channels, channels, 3, 3]))
            .expect("fresh");
        p.insert(format!("{prefix}.w_{gate}"), Tensor::zeros(&[channels, channels, 3, 3]))
            .expect("fresh");
        p.insert(format!("{prefix}.b_{gate}"), Tensor::zeros(&[channels]))
            .expect("fresh");
    }
    p
}

fn gate_pre<'t>(
    h: Var<'t>,
    x: Var<'t>,
    params: &Bound<'t>,
    prefix: &str,
    gate: &str,
    zero_bias: Var<'t>,
) -> Result<Var<'t>> {
    let hh = conv2d_same(h, params.get(&format!("{prefix}.u_{gate}"))?, zero_bias)?;
    let xx = conv2d_same(
        x,
        params.get(&format!("{prefix}.w_{gate}"))?,
        params.get(&format!("{prefix}.b_{gate}"))?,
    )?;
    hh.add(xx)
}

/// One recorded step. Returns `(H_t, R_t, Z_t, H~_t)`.
pub fn step_var<'t>(
    h_prev: Var<'t>,
    x: Var<'t>,
    params: &Bound<'t>,
    prefix: &str,
) -> Result<(Var<'t>, Var<'t>, Var<'t>, Var<'t>)> {
    let hs = h_prev.shape();
    let xs = x.shape();
    if hs.len() != 3 || xs.len() != 3 || hs[1..] != xs[1..] {
        return Err(Error::Shape {
            op: "convgru_step",
            lhs: hs,
            rhs: xs,
        });
    }
    let tape = h_prev.tape();
    let zero_bias = tape.leaf(Tensor::zeros(&[hs[0]]));
    let r = gate_pre(h_prev, x, params, prefix, "r", zero_bias)?.sigmoid();
    let z = gate_pre(h_prev, x, params, prefix, "z", zero_bias)?.sigmoid();
    let rh = r.mul(h_prev)?;
    let cand = gate_pre(rh, x, params, prefix, "h", zero_bias)?.tanh();
    let h = z.mul(h_prev)?.add(z.affine(-1.0, 1.0).mul(cand)?)?;
    Ok((h, r, z, cand))
}

pub fn convgru_step(
    prev: &ConvGruState,
    x: &Tensor,
    params: &ParamStore,
    prefix: &str,
) -> Result<(ConvGruState, GateTrace)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let h_prev = tape.leaf(prev.h.clone());
    let xv = tape.leaf(x.clone());
    let (h, r, z, c) = step_var(h_prev, xv, &bound, prefix)?;
    Ok((
        ConvGruState { h: h.to_tensor() },
        GateTrace {
            reset: r.to_tensor(),
            update: z.to_tensor(),
            candidate: c.to_tensor(),
        },
    ))
}

/// Folds [`convgru_step`] over a sequence; `h0` defaults to zeros.
pub fn convgru_run(
    h0: Option<&ConvGruState>,
    seq: &[Tensor],
    params: &ParamStore,
    prefix: &str,
) -> Result<Vec<ConvGruState>> {
    let first = seq.first().ok_or(Error::EmptySequence)?;
    let channels = params.get(&format!("{prefix}.b_h"))?.len();
    let mut state = match h0 {
        Some(s) => s.clone(),
        None => ConvGruState::zeros(channels, first.shape()[1], first.shape()[2]),
    };
    let mut out = Vec::with_capacity(seq.len());
    for x in seq {
        state = convgru_step(&state, x, params, prefix)?.0;
        out.push(state.clone());
    }
    Ok(out)
}

/// Recorded fold, for gradients through time.
pub fn run_var<'t>(h0: Var<'t>, seq: &[Var<'t>], params: &Bound<'t>, prefix: &str) -> Result<Vec<Var<'t>>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut h = h0;
    let mut out = Vec::with_capacity(seq.len());
    for &x in seq {
        h = step_var(h, x, params, prefix)?.0;
        out.push(h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(init: &mut Init, c: usize, n: usize) -> Tensor {
        init.uniform(&[c, n, n], 1)
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = zero_params("g", 2);
        let mut init = Init::new(4);
        let h = ConvGruState {
            h: random_map(&mut init, 2, 4),
        };
        let x = random_map(&mut init, 2, 4);
        let (next, gates) = convgru_step(&h, &x, &p, "g").unwrap();
        assert!(gates.update.data().iter().all(|&z| z == 0.5));
        assert!(gates.candidate.data().iter().all(|&c| c == 0.0));
        assert_eq!(next.h, h.h.scale(0.5));
        let (zero, _) = convgru_step(&ConvGruState::zeros(2, 4, 4), &x, &p, "g").unwrap();
        assert!(zero.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gates_stay_in_open_unit_interval() {
        let mut init = Init::new(11);
        let p = init_params(&mut init, "g", 3);
        let mut state = ConvGruState::zeros(3, 5, 5);
        for _ in 0..4 {
            let x = random_map(&mut init, 3, 5).scale(4.0);
            let (next, gates) = convgru_step(&state, &x, &p, "g").unwrap();
            for g in [&gates.reset, &gates.update] {
                assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            for ((&hn, &hp), &c) in next.h.data().iter().zip(state.h.data()).zip(gates.candidate.data()) {
                assert!(hn.abs() <= hp.abs().max(c.abs()) + 1e-15);
                assert!(hn.abs() <= hp.abs().max(1.0));
            }
            state = next;
        }
    }

    #[test]
    fn shape_mismatch_and_empty_sequence() {
        let p = zero_params("g", 2);
        let h = ConvGruState::zeros(2, 4, 4);
        assert!(convgru_step(&h, &Tensor::zeros(&[2, 3, 4]), &p, "g").is_err());
        assert!(matches!(convgru_run(None, &[], &p, "g"), Err(Error::EmptySequence)));
    }

    #[test]
    fn single_frame_run_equals_step() {
        let mut init = Init::new(2);
        let p = init_params(&mut init, "g", 2);
        let x = random_map(&mut init, 2, 4);
        let run = convgru_run(None, std::slice::from_ref(&x), &p, "g").unwrap();
        let (step, _) = convgru_step(&ConvGruState::zeros(2, 4, 4), &x, &p, "g").unwrap();
        assert_eq!(run, vec![step]);
    }
}
