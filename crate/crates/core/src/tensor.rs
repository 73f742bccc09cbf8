//! Dense row-major `f64` tensors and the raw kernels behind the tape ops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;
    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![r.len()],
                    rhs: vec![cols],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent of a 2D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.require_2d("matmul")?;
        let (k2, m) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (n, m) = self.require_2d("transpose")?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Adds `bias` (length = trailing extent) to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Column sums of a 2D tensor.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::vector(out)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (n, m) = self.require_2d("slice_cols")?;
        if start > end || end > m {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape.clone(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&self.data[i * m + start..i * m + end]);
        }
        Ok(Self {
            shape: vec![n, w],
            data: out,
        })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (n, m) = self.require_2d("slice_rows")?;
        if start > end || end > n {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.shape.clone(),
                rhs: vec![start, end],
            });
        }
        Ok(Self {
            shape: vec![end - start, m],
            data: self.data[start * m..end * m].to_vec(),
        })
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }

    /// Row-wise numerically stable softmax of a 2D tensor.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (_, m) = self.require_2d("softmax_rows")?;
        let mut out = self.clone();
        if m == 0 {
            return Ok(out);
        }
        for row in out.data.chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(out)
    }
}

/// Softmax restricted to entries where `mask` is true; masked entries are 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape {
            op: "masked_softmax",
            lhs: vec![logits.len()],
            rhs: vec![mask.len()],
        });
    }
    let mx = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(Error::EmptyNeighborhood);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - mx).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

/// 3x3 cross-correlation with zero padding 1.
/// `x: [cin, h, w]`, `k: [cout, cin, 3, 3]`, `b: [cout]` -> `[cout, h, w]`.
pub fn conv2d_same(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = conv_dims(x, k, b)?;
    let cout = k.shape[0];
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = b.data[o]);
        for c in 0..cin {
            let xin = &x.data[c * h * w..(c + 1) * h * w];
            for a in 0..3 {
                for bb in 0..3 {
                    let kv = k.data[((o * cin + c) * 3 + a) * 3 + bb];
                    if kv == 0.0 {
                        continue;
                    }
                    for i in 0..h {
                        let si = i as isize + a as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j as isize + bb as isize - 1;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            plane[i * w + j] += kv * xin[si as usize * w + sj as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

fn conv_dims(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let bad = || Error::Shape {
        op: "conv2d_same",
        lhs: x.shape.clone(),
        rhs: k.shape.clone(),
    };
    if x.shape.len() != 3 || k.shape.len() != 4 || k.shape[2] != 3 || k.shape[3] != 3 {
        return Err(bad());
    }
    if k.shape[1] != x.shape[0] || b.len() != k.shape[0] {
        return Err(bad());
    }
    Ok((x.shape[0], x.shape[1], x.shape[2]))
}

/// Gradients of `conv2d_same` w.r.t. `(x, k, b)` for upstream `g: [cout, h, w]`.
pub fn conv2d_same_backward(x: &Tensor, k: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (cin, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let cout = k.shape[0];
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; cout];
    for o in 0..cout {
        let gp = &g.data[o * h * w..(o + 1) * h * w];
        db[o] = gp.iter().sum();
        for c in 0..cin {
            let xin = &x.data[c * h * w..(c + 1) * h * w];
            let dxin = &mut dx[c * h * w..(c + 1) * h * w];
            for a in 0..3 {
                for bb in 0..3 {
                    let kidx = ((o * cin + c) * 3 + a) * 3 + bb;
                    let kv = k.data[kidx];
                    let mut acc = 0.0;
                    for i in 0..h {
                        let si = i as isize + a as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j as isize + bb as isize - 1;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            let src = si as usize * w + sj as usize;
                            acc += gp[i * w + j] * xin[src];
                            dxin[src] += kv * gp[i * w + j];
                        }
                    }
                    dk[kidx] += acc;
                }
            }
        }
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        Tensor {
            shape: k.shape.clone(),
            data: dk,
        },
        Tensor::vector(db),
    )
}
