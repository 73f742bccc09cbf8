//! Layer-level building blocks on top of the tape.

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamStore};
use crate::tape::{concat_cols, dot_attention, Var};

/// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}

/// Non-linearity applied to aggregated messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>, slope: f64) -> Var<'t> {
        match self {
            Activation::Elu => x.elu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::LeakyRelu => x.leaky_relu(slope),
            Activation::Identity => x,
        }
    }
}

/// Registers `{prefix}.wq/.wk/.wv/.wo`, each `[c, c]`.
pub fn init_mhsa(init: &mut Init, prefix: &str, c: usize) -> ParamStore {
    let mut p = ParamStore::new();
    for name in ["wq", "wk", "wv", "wo"] {
        p.insert(format!("{prefix}.{name}"), init.weight(c, c))
            .expect("fresh names");
    }
    p
}

/// Multi-head scaled dot-product self-attention with a residual add:
/// `x + concat_h(softmax(Q_h K_h^T / sqrt(d)) V_h) W_o`.
pub fn dense_mhsa<'t>(x: Var<'t>, params: &Bound<'t>, prefix: &str, heads: usize) -> Result<Var<'t>> {
    let shape = x.shape();
    let c = shape[1];
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Heads { heads, width: c });
    }
    let d = c / heads;
    let q = x.matmul(params.get(&format!("{prefix}.wq"))?)?;
    let k = x.matmul(params.get(&format!("{prefix}.wk"))?)?;
    let v = x.matmul(params.get(&format!("{prefix}.wv"))?)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * d, (h + 1) * d);
        let qh = q.slice_cols(s, e)?;
        let kh = k.slice_cols(s, e)?;
        let vh = v.slice_cols(s, e)?;
        outs.push(dot_attention(qh, kh, vh, scale)?);
    }
    let merged = if heads == 1 { outs[0] } else { concat_cols(&outs)? };
    x.add(merged.matmul(params.get(&format!("{prefix}.wo"))?)?)
}
