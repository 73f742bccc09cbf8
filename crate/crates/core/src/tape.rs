//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op applied to its [`Var`]s together with a
//! pullback closure. [`Tape::backward`] walks the record in reverse order.
//! A tape belongs to one thread; independent computations use separate
//! tapes.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

type Pullback = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    pullback: Option<Pullback>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    non_finite: Cell<Option<&'static str>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

/// Gradients of a scalar w.r.t. every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: &'static str, value: Tensor, inputs: Vec<usize>, pullback: Option<Pullback>) -> Var<'_> {
        if self.non_finite.get().is_none() && !value.is_finite() {
            self.non_finite.set(Some(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            inputs,
            pullback,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push("leaf", value, vec![], None)
    }

    /// Records an op whose value and pullback are supplied by the caller.
    /// `pullback` maps the upstream gradient to one gradient per input.
    pub fn custom<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t>],
        value: Tensor,
        pullback: impl Fn(&Tensor) -> Vec<Tensor> + 'static,
    ) -> Var<'t> {
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(op, value, ids, Some(Box::new(pullback)))
    }

    /// First op that produced a non-finite value, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite.get() {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let seed = Tensor::full(nodes[output.id].value.shape(), 1.0);
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(pb) = &node.pullback {
                let input_grads = pb(&g);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                    match &mut grads[inp] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.to_tensor();
        let y = x.map(f);
        let y_saved = y.clone();
        self.tape.custom(op, &[self], y, move |g| {
            let d = x
                .data()
                .iter()
                .zip(y_saved.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Tensor::new(x.shape().to_vec(), d).expect("shape")]
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            "leaky_relu",
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn elu(self) -> Var<'t> {
        self.unary(
            "elu",
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn exp(self) -> Var<'t> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn square(self) -> Var<'t> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    /// `a * x + b` elementwise.
    pub fn affine(self, a: f64, b: f64) -> Var<'t> {
        self.unary("affine", move |x| a * x + b, move |_, _| a)
    }

    pub fn scale(self, a: f64) -> Var<'t> {
        self.affine(a, 0.0)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let y = self.value().add(&other.value())?;
        Ok(self
            .tape
            .custom("add", &[self, other], y, |g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let y = self.value().sub(&other.value())?;
        Ok(self
            .tape
            .custom("sub", &[self, other], y, |g| vec![g.clone(), g.scale(-1.0)]))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.to_tensor();
        let b = other.to_tensor();
        let y = a.mul(&b)?;
        Ok(self.tape.custom("mul", &[self, other], y, move |g| {
            vec![g.mul(&b).expect("shape"), g.mul(&a).expect("shape")]
        }))
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn mul_const(self, c: &Tensor) -> Result<Var<'t>> {
        let c = c.clone();
        let y = self.value().mul(&c)?;
        Ok(self
            .tape
            .custom("mul_const", &[self], y, move |g| vec![g.mul(&c).expect("shape")]))
    }

    /// Scales row `i` of a 2D value by `factors[i]`.
    pub fn scale_rows(self, factors: &[f64]) -> Result<Var<'t>> {
        let x = self.to_tensor();
        if x.shape().len() != 2 || x.rows() != factors.len() {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let c = x.cols();
        let mut full = Vec::with_capacity(x.len());
        for &f in factors {
            full.extend(std::iter::repeat_n(f, c));
        }
        let c = Tensor::new(x.shape().to_vec(), full)?;
        self.mul_const(&c)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.to_tensor();
        let b = other.to_tensor();
        let y = a.matmul(&b)?;
        Ok(self.tape.custom("matmul", &[self, other], y, move |g| {
            let da = g.matmul(&b.transpose().expect("2d")).expect("shape");
            let db = a.transpose().expect("2d").matmul(g).expect("shape");
            vec![da, db]
        }))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let y = self.value().transpose()?;
        Ok(self
            .tape
            .custom("transpose", &[self], y, |g| vec![g.transpose().expect("2d")]))
    }

    /// Broadcast-adds a bias vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let y = self.value().add_row(&bias.value())?;
        let bshape = bias.shape();
        Ok(self.tape.custom("add_row", &[self, bias], y, move |g| {
            let db = g.sum_rows().reshape(bshape.clone()).expect("shape");
            vec![g.clone(), db]
        }))
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let y = Tensor::scalar(x.sum());
        drop(x);
        self.tape.custom("sum", &[self], y, move |g| {
            vec![Tensor::full(&shape, g.item())]
        })
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.to_tensor();
        let y = x.slice_cols(start, end)?;
        let (n, m) = (x.rows(), x.cols());
        Ok(self.tape.custom("slice_cols", &[self], y, move |g| {
            let w = end - start;
            let mut d = Tensor::zeros(&[n, m]);
            for i in 0..n {
                d.data_mut()[i * m + start..i * m + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![d]
        }))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.to_tensor();
        let y = x.slice_rows(start, end)?;
        let (n, m) = (x.rows(), x.cols());
        Ok(self.tape.custom("slice_rows", &[self], y, move |g| {
            let mut d = Tensor::zeros(&[n, m]);
            d.data_mut()[start * m..end * m].copy_from_slice(g.data());
            vec![d]
        }))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let y = self.value().softmax_rows()?;
        let ys = y.clone();
        Ok(self.tape.custom("softmax_rows", &[self], y, move |g| {
            let m = ys.cols();
            let mut d = vec![0.0; ys.len()];
            for ((yr, gr), dr) in ys
                .data()
                .chunks(m)
                .zip(g.data().chunks(m))
                .zip(d.chunks_mut(m))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for k in 0..m {
                    dr[k] = yr[k] * (gr[k] - dot);
                }
            }
            vec![Tensor::new(ys.shape().to_vec(), d).expect("shape")]
        }))
    }

    /// Softmax over the entries of a vector where `mask` is true.
    pub fn masked_softmax(self, mask: &[bool]) -> Result<Var<'t>> {
        let x = self.to_tensor();
        let y = Tensor::new(x.shape().to_vec(), tensor::masked_softmax(x.data(), mask)?)?;
        let ys = y.clone();
        Ok(self.tape.custom("masked_softmax", &[self], y, move |g| {
            let dot: f64 = ys.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            vec![ys.zip_map(g, "masked_softmax", |yv, gv| yv * (gv - dot)).expect("shape")]
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts[0].tape;
    let vals: Vec<Tensor> = parts.iter().map(|p| p.to_tensor()).collect();
    let n = vals[0].rows();
    if vals.iter().any(|v| v.shape().len() != 2 || v.rows() != n) {
        return Err(Error::Shape {
            op: "concat_cols",
            lhs: vals[0].shape().to_vec(),
            rhs: vals.iter().map(|v| v.rows()).collect(),
        });
    }
    let widths: Vec<usize> = vals.iter().map(|v| v.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total);
    for i in 0..n {
        for v in &vals {
            data.extend_from_slice(v.row(i));
        }
    }
    let y = Tensor::new(vec![n, total], data)?;
    Ok(tape.custom("concat_cols", parts, y, move |g| {
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let s = g.slice_cols(start, start + w).expect("shape");
                start += w;
                s
            })
            .collect()
    }))
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts[0].tape;
    let vals: Vec<Tensor> = parts.iter().map(|p| p.to_tensor()).collect();
    let m = vals[0].cols();
    if vals.iter().any(|v| v.shape().len() != 2 || v.cols() != m) {
        return Err(Error::Shape {
            op: "concat_rows",
            lhs: vals[0].shape().to_vec(),
            rhs: vals.iter().map(|v| v.cols()).collect(),
        });
    }
    let heights: Vec<usize> = vals.iter().map(|v| v.rows()).collect();
    let data: Vec<f64> = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
    let y = Tensor::new(vec![heights.iter().sum(), m], data)?;
    Ok(tape.custom("concat_rows", parts, y, move |g| {
        let mut start = 0;
        heights
            .iter()
            .map(|&h| {
                let s = g.slice_rows(start, start + h).expect("shape");
                start += h;
                s
            })
            .collect()
    }))
}

/// Recorded `conv2d_same`.
pub fn conv2d_same<'t>(x: Var<'t>, k: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let xv = x.to_tensor();
    let kv = k.to_tensor();
    let y = tensor::conv2d_same(&xv, &kv, &b.value())?;
    Ok(x.tape.custom("conv2d_same", &[x, k, b], y, move |g| {
        let (dx, dk, db) = tensor::conv2d_same_backward(&xv, &kv, g);
        vec![dx, dk, db]
    }))
}

/// Neighborhood attention with additive logits.
///
/// For target row `i` with neighbor list `neighbors[i]` (indices into the
/// source rows), the weights are `softmax_j(leaky(left[i] + right[j]))` and
/// the output row is `sum_j weight_ij * values[j]`. Rows with no neighbors
/// are zero. `left: [n, 1]`, `right: [m, 1]`, `values: [m, c]`.
pub fn neighbor_attention<'t>(
    left: Var<'t>,
    right: Var<'t>,
    values: Var<'t>,
    neighbors: &[Vec<usize>],
    slope: f64,
) -> Result<Var<'t>> {
    let l = left.to_tensor();
    let r = right.to_tensor();
    let v = values.to_tensor();
    let (n, m, c) = (l.len(), r.len(), v.cols());
    if neighbors.len() != n || v.rows() != m || neighbors.iter().flatten().any(|&j| j >= m) {
        return Err(Error::Shape {
            op: "neighbor_attention",
            lhs: vec![n, m],
            rhs: vec![neighbors.len(), v.rows()],
        });
    }
    let neighbors = neighbors.to_vec();
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut out = vec![0.0; n * c];
    for (i, nb) in neighbors.iter().enumerate() {
        let p: Vec<f64> = nb.iter().map(|&j| l.data()[i] + r.data()[j]).collect();
        let z: Vec<f64> = p.iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let w = if nb.is_empty() {
            vec![]
        } else {
            tensor::masked_softmax(&z, &vec![true; z.len()])?
        };
        for (&j, &wj) in nb.iter().zip(&w) {
            for k in 0..c {
                out[i * c + k] += wj * v.data()[j * c + k];
            }
        }
        weights.push(w);
        pre.push(p);
    }
    let y = Tensor::new(vec![n, c], out)?;
    let lshape = l.shape().to_vec();
    let rshape = r.shape().to_vec();
    Ok(left.tape.custom(
        "neighbor_attention",
        &[left, right, values],
        y,
        move |g| {
            let mut dl = vec![0.0; n];
            let mut dr = vec![0.0; m];
            let mut dv = vec![0.0; m * c];
            for i in 0..n {
                let nb = &neighbors[i];
                if nb.is_empty() {
                    continue;
                }
                let gi = &g.data()[i * c..(i + 1) * c];
                let w = &weights[i];
                let dw: Vec<f64> = nb
                    .iter()
                    .map(|&j| gi.iter().zip(&v.data()[j * c..(j + 1) * c]).map(|(a, b)| a * b).sum())
                    .collect();
                let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                for (k, &j) in nb.iter().enumerate() {
                    for q in 0..c {
                        dv[j * c + q] += w[k] * gi[q];
                    }
                    let dz = w[k] * (dw[k] - dot);
                    let dp = if pre[i][k] > 0.0 { dz } else { slope * dz };
                    dl[i] += dp;
                    dr[j] += dp;
                }
            }
            vec![
                Tensor::new(lshape.clone(), dl).expect("shape"),
                Tensor::new(rshape.clone(), dr).expect("shape"),
                Tensor::new(vec![m, c], dv).expect("shape"),
            ]
        },
    ))
}

/// Scaled dot-product attention `softmax(q k^T * scale) v`, fused so the
/// `[n, m]` weight matrix is materialized once.
pub fn dot_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, scale: f64) -> Result<Var<'t>> {
    let (qt, kt, vt) = (q.to_tensor(), k.to_tensor(), v.to_tensor());
    let (n, d) = (qt.rows(), qt.cols());
    let (m, dv) = (kt.rows(), vt.cols());
    if kt.cols() != d || vt.rows() != m || qt.shape().len() != 2 {
        return Err(Error::Shape {
            op: "dot_attention",
            lhs: qt.shape().to_vec(),
            rhs: kt.shape().to_vec(),
        });
    }
    let mut p = vec![0.0; n * m];
    let mut out = vec![0.0; n * dv];
    for i in 0..n {
        let qi = &qt.data()[i * d..(i + 1) * d];
        let row = &mut p[i * m..(i + 1) * m];
        let mut mx = f64::NEG_INFINITY;
        for (j, r) in row.iter_mut().enumerate() {
            let kj = &kt.data()[j * d..(j + 1) * d];
            *r = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            mx = mx.max(*r);
        }
        let mut z = 0.0;
        for r in row.iter_mut() {
            *r = (*r - mx).exp();
            z += *r;
        }
        let oi = &mut out[i * dv..(i + 1) * dv];
        for (j, r) in row.iter_mut().enumerate() {
            *r /= z;
            for (o, &x) in oi.iter_mut().zip(&vt.data()[j * dv..(j + 1) * dv]) {
                *o += *r * x;
            }
        }
    }
    let y = Tensor::new(vec![n, dv], out)?;
    Ok(q.tape.custom("dot_attention", &[q, k, v], y, move |g| {
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; m * d];
        let mut dvv = vec![0.0; m * dv];
        let mut ds = vec![0.0; m];
        for i in 0..n {
            let gi = &g.data()[i * dv..(i + 1) * dv];
            let pi = &p[i * m..(i + 1) * m];
            let mut dot = 0.0;
            for j in 0..m {
                let vj = &vt.data()[j * dv..(j + 1) * dv];
                ds[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot += pi[j] * ds[j];
                for (acc, &gv) in dvv[j * dv..(j + 1) * dv].iter_mut().zip(gi) {
                    *acc += pi[j] * gv;
                }
            }
            let qi = &qt.data()[i * d..(i + 1) * d];
            for j in 0..m {
                let s = scale * pi[j] * (ds[j] - dot);
                if s == 0.0 {
                    continue;
                }
                let kj = &kt.data()[j * d..(j + 1) * d];
                for c in 0..d {
                    dq[i * d + c] += s * kj[c];
                    dk[j * d + c] += s * qi[c];
                }
            }
        }
        vec![
            Tensor::new(vec![n, d], dq).expect("shape"),
            Tensor::new(vec![m, d], dk).expect("shape"),
            Tensor::new(vec![m, dv], dvv).expect("shape"),
        ]
    }))
}

/// Fixed-weight neighborhood aggregation: row `i` is
/// `sum_k weights[i][k] * values[neighbors[i][k]]`.
pub fn weighted_gather<'t>(
    values: Var<'t>,
    neighbors: &[Vec<usize>],
    weights: &[Vec<f64>],
) -> Result<Var<'t>> {
    let v = values.to_tensor();
    let (m, c) = (v.rows(), v.cols());
    let n = neighbors.len();
    if weights.len() != n
        || neighbors.iter().zip(weights).any(|(a, b)| a.len() != b.len())
        || neighbors.iter().flatten().any(|&j| j >= m)
    {
        return Err(Error::Shape {
            op: "weighted_gather",
            lhs: vec![n],
            rhs: vec![weights.len(), m],
        });
    }
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        for (&j, &wj) in neighbors[i].iter().zip(&weights[i]) {
            for q in 0..c {
                out[i * c + q] += wj * v.data()[j * c + q];
            }
        }
    }
    let neighbors = neighbors.to_vec();
    let weights = weights.to_vec();
    let y = Tensor::new(vec![n, c], out)?;
    Ok(values.tape.custom("weighted_gather", &[values], y, move |g| {
        let mut dv = vec![0.0; m * c];
        for i in 0..n {
            for (&j, &wj) in neighbors[i].iter().zip(&weights[i]) {
                for q in 0..c {
                    dv[j * c + q] += wj * g.data()[i * c + q];
                }
            }
        }
        vec![Tensor::new(vec![m, c], dv).expect("shape")]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_through_shared_input() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        // f = sum(x*x + 3x)
        let y = x.mul(x).unwrap().add(x.scale(3.0)).unwrap().sum();
        assert_eq!(y.value().item(), 1.0 + 4.0 + 9.0 + 3.0 * 2.0);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).data(), &[5.0, -1.0, 9.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let z = tape.leaf(Tensor::zeros(&[2, 2]));
        let y = x.sum();
        let g = tape.backward(y);
        assert_eq!(g.wrt(z), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_finite_is_reported_with_op() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1000.0]));
        let _ = x.exp().exp();
        match tape.check_finite() {
            Err(Error::NonFinite { op }) => assert_eq!(op, "exp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn activations_at_reference_points() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, -1.0, 2.0]));
        assert_eq!(x.sigmoid().value().data()[0], 0.5);
        assert_eq!(x.leaky_relu(0.2).value().data(), &[0.0, -0.2, 2.0]);
        let e = x.elu().to_tensor();
        assert!((e.data()[1] - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(e.data()[2], 2.0);
    }

    #[test]
    fn isolated_rows_are_zero() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::matrix(2, 1, vec![0.1, 0.2]).unwrap());
        let r = tape.leaf(Tensor::matrix(2, 1, vec![0.3, 0.4]).unwrap());
        let v = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = neighbor_attention(l, r, v, &[vec![], vec![0]], 0.2).unwrap();
        assert_eq!(out.value().data(), &[0.0, 0.0, 1.0, 2.0]);
    }
}
