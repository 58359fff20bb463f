use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Row ranges pairing each query segment with the key/value rows it may
/// attend to. Segments never see each other, which lets many independent
/// sequences share one matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub queries: Vec<Range<usize>>,
    pub keys: Vec<Range<usize>>,
}

impl AttentionLayout {
    /// Self-attention: every segment attends within itself.
    pub fn self_attention(segments: Vec<Range<usize>>) -> Self {
        AttentionLayout {
            keys: segments.clone(),
            queries: segments,
        }
    }

    pub fn single(rows: usize) -> Self {
        Self::self_attention(vec![0..rows])
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    WeightedMse {
        x: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
    L1 {
        x: Var,
        target: Vec<f64>,
    },
    BceLogits {
        x: Var,
        labels: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
    KlRows {
        p: Var,
        q: Var,
        weights: Vec<f64>,
        norm: f64,
    },
    GaussianKl {
        mu: Var,
        logvar: Var,
    },
    NegDistance {
        x: Var,
        m: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Arc<AttentionLayout>,
        probs: Vec<Vec<f64>>,
    },
    TriplaneSample {
        planes: Var,
        taps: Vec<[(usize, f64); 4]>,
        channels: usize,
    },
    ScatterMean {
        x: Var,
        pairs: Vec<(usize, usize)>,
        counts: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eager computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], kept for leaves only.
pub struct Gradients {
    leaves: HashMap<usize, Vec<f64>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to an input created by [`Graph::input`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v.0).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn param_norm(&self) -> f64 {
        self.params()
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Gumbel-Softmax weights `softmax((x + g) / tau)` with fresh Gumbel noise.
pub fn gumbel_softmax_weights(logits: &[f64], tau: f64, rng: &mut Rng) -> Vec<f64> {
    let mut w: Vec<f64> = logits.iter().map(|x| (x + rng.gumbel()) / tau).collect();
    softmax_in_place(&mut w);
    w
}

/// Bilinear taps for a coordinate in `[-1, 1]` on an `res`-node axis
/// (corner-aligned). Out-of-range coordinates are clamped.
fn axis_taps(u: f64, res: usize) -> (usize, usize, f64) {
    let t = ((u.clamp(-1.0, 1.0) + 1.0) * 0.5) * (res - 1) as f64;
    let i0 = (t.floor() as usize).min(res - 2);
    (i0, i0 + 1, t - i0 as f64)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// A constant with no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter, copying it in on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.bound.insert(id, v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x), ng)
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op_name, a, b));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.nodes[row.0].value.len() != c {
            return Err(self.mismatch("add_row", a, row));
        }
        let rv = self.data(row);
        let mut out = self.data(a).to_vec();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(a, row), ng))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::SoftmaxRows(x), ng)
    }

    /// Row-wise layer normalization with per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.nodes[gain.0].value.len() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.nodes[bias.0].value.len() != c {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let xs = self.data(x);
        let gs = self.data(gain);
        let bs = self.data(bias);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gs[j] + bs[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::invalid("concat_cols", "no inputs"));
        };
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(self.mismatch("concat_cols", first, p));
            }
            total += self.dims(p).1;
        }
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let c = self.dims(p).1;
            let src = self.data(p);
            for i in 0..rows {
                out[i * total + off..i * total + off + c].copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::invalid("concat_rows", "no inputs"));
        };
        let cols = self.dims(first).1;
        let mut out = Vec::new();
        for &p in parts {
            if self.dims(p).1 != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            out.extend_from_slice(self.data(p));
        }
        let rows = out.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("range {start}..{} exceeds {c} columns", start + len),
            ));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![r, len], out), Op::SliceCols { x, start }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(TensorError::invalid(
                "slice_rows",
                format!("range {start}..{} exceeds {r} rows", start + len),
            ));
        }
        let out = self.data(x)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![len, c], out), Op::SliceRows { x, start }, ng))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![index.len(), c], out),
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let w = vec![1.0; target.len()];
        self.mse_weighted(x, target, &w)
    }

    /// `Σ w (x - t)² / Σ w`; zero when every weight is zero.
    pub fn mse_weighted(&mut self, x: Var, target: &Tensor, weights: &[f64]) -> Result<Var> {
        let n = self.nodes[x.0].value.len();
        if target.len() != n || weights.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                left: self.shape(x).to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let wsum: f64 = weights.iter().sum();
        let norm = if wsum > 0.0 { wsum } else { 1.0 };
        let loss = self
            .data(x)
            .iter()
            .zip(target.data())
            .zip(weights)
            .map(|((a, t), w)| w * (a - t) * (a - t))
            .sum::<f64>()
            / norm;
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedMse {
                x,
                target: target.data().to_vec(),
                weights: weights.to_vec(),
                norm,
            },
            ng,
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn l1(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let n = self.nodes[x.0].value.len();
        if target.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "l1",
                left: self.shape(x).to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let loss = self
            .data(x)
            .iter()
            .zip(target.data())
            .map(|(a, t)| (a - t).abs())
            .sum::<f64>()
            / n.max(1) as f64;
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                x,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// Weighted binary cross-entropy on logits, normalized by the weight sum.
    pub fn bce_with_logits(&mut self, x: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let n = self.nodes[x.0].value.len();
        if labels.len() != n || weights.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(x).to_vec(),
                right: vec![labels.len()],
            });
        }
        let wsum: f64 = weights.iter().sum();
        let norm = if wsum > 0.0 { wsum } else { 1.0 };
        let loss = self
            .data(x)
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((&o, &y), &w)| w * (o.max(0.0) - o * y + (-o.abs()).exp().ln_1p()))
            .sum::<f64>()
            / norm;
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                x,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                norm,
            },
            ng,
        ))
    }

    /// Row-wise `KL(softmax(p) || softmax(q))`, averaged with row weights.
    pub fn kl_categorical(&mut self, p: Var, q: Var, row_weights: Option<&[f64]>) -> Result<Var> {
        if self.shape(p) != self.shape(q) {
            return Err(self.mismatch("kl_categorical", p, q));
        }
        let (r, c) = self.dims(p);
        let weights = match row_weights {
            Some(w) if w.len() == r => w.to_vec(),
            Some(w) => {
                return Err(TensorError::ShapeMismatch {
                    op: "kl_categorical",
                    left: vec![r],
                    right: vec![w.len()],
                })
            }
            None => vec![1.0; r],
        };
        let wsum: f64 = weights.iter().sum();
        let norm = if wsum > 0.0 { wsum } else { 1.0 };
        let (pd, qd) = (self.data(p), self.data(q));
        let mut loss = 0.0;
        for i in 0..r {
            if weights[i] == 0.0 {
                continue;
            }
            let lp = log_softmax(&pd[i * c..(i + 1) * c]);
            let lq = log_softmax(&qd[i * c..(i + 1) * c]);
            let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
            loss += weights[i] * kl;
        }
        let ng = self.ng(p) || self.ng(q);
        Ok(self.push(
            Tensor::scalar(loss / norm),
            Op::KlRows {
                p,
                q,
                weights,
                norm,
            },
            ng,
        ))
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))` summed over columns, averaged
    /// over rows.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        if self.shape(mu) != self.shape(logvar) {
            return Err(self.mismatch("gaussian_kl", mu, logvar));
        }
        let rows = self.dims(mu).0.max(1);
        let kl = self
            .data(mu)
            .iter()
            .zip(self.data(logvar))
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum::<f64>()
            / rows as f64;
        let ng = self.ng(mu) || self.ng(logvar);
        Ok(self.push(Tensor::scalar(kl), Op::GaussianKl { mu, logvar }, ng))
    }

    /// `out[b, l] = -‖x_b - m_l‖₂` for `x: [B, D]`, `m: [N, D]`.
    pub fn neg_distance(&mut self, x: Var, m: Var) -> Result<Var> {
        let (b, d) = self.dims(x);
        let (n, d2) = self.dims(m);
        if d != d2 {
            return Err(self.mismatch("neg_distance", x, m));
        }
        let (xd, md) = (self.data(x), self.data(m));
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            for l in 0..n {
                let s: f64 = (0..d).map(|k| (xd[i * d + k] - md[l * d + k]).powi(2)).sum();
                out[i * n + l] = -s.sqrt();
            }
        }
        let ng = self.ng(x) || self.ng(m);
        Ok(self.push(Tensor::from_parts(vec![b, n], out), Op::NegDistance { x, m }, ng))
    }

    /// Multi-head scaled dot-product attention over segmented rows.
    ///
    /// `q` is `[Nq, d]`, `k` and `v` are `[Nk, d]`. Query rows outside every
    /// segment, and segments with no key rows, produce zeros. No causal mask
    /// is applied.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, layout: Arc<AttentionLayout>) -> Result<Var> {
        let (nq, d) = self.dims(q);
        let (nk, dk) = self.dims(k);
        if dk != d {
            return Err(self.mismatch("attention", q, k));
        }
        if self.shape(k) != self.shape(v) {
            return Err(self.mismatch("attention", k, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::invalid(
                "attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        if layout.queries.len() != layout.keys.len() {
            return Err(TensorError::invalid("attention", "segment count mismatch"));
        }
        for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
            if qs.end > nq || ks.end > nk {
                return Err(TensorError::invalid("attention", "segment out of range"));
            }
        }
        let (out, probs) = attention_forward(self.data(q), self.data(k), self.data(v), nq, d, heads, &layout);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::from_parts(vec![nq, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            },
            ng,
        ))
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node,
    /// one `[nq, nk]` row-major block per (segment, head), segment-major.
    pub fn attention_probs(&self, v: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Bilinear lookup into three axis-aligned feature planes.
    ///
    /// `planes` is `[S * 3 * res * res, C]`: for each sample `s`, the XY, XZ
    /// and YZ planes, each `res × res` cells in row-major `(v, u)` order.
    /// Each query point in `coords` (`[Q, 3]`, clamped to `[-1, 1]`) reads
    /// from the sample named by `sample_of`. The result is `[Q, 3C]`, the
    /// three plane features side by side.
    pub fn triplane_sample(&mut self, planes: Var, res: usize, coords: &Tensor, sample_of: &[usize]) -> Result<Var> {
        let (cells, c) = self.dims(planes);
        let per_sample = 3 * res * res;
        if res < 2 || cells % per_sample != 0 {
            return Err(TensorError::invalid(
                "triplane_sample",
                format!("{cells} rows is not a whole number of {res}x{res} triplanes"),
            ));
        }
        let samples = cells / per_sample;
        let q = coords.rows();
        if coords.cols() != 3 || sample_of.len() != q {
            return Err(TensorError::invalid("triplane_sample", "coords must be [Q, 3] with one sample index per row"));
        }
        if let Some(&bad) = sample_of.iter().find(|&&s| s >= samples) {
            return Err(TensorError::invalid("triplane_sample", format!("sample {bad} out of range")));
        }
        let mut taps = Vec::with_capacity(q * 3);
        for (qi, &s) in sample_of.iter().enumerate() {
            let p = coords.row_slice(qi);
            for (plane, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
                let (u0, u1, fu) = axis_taps(p[a], res);
                let (v0, v1, fv) = axis_taps(p[b], res);
                let base = s * per_sample + plane * res * res;
                taps.push([
                    (base + v0 * res + u0, (1.0 - fu) * (1.0 - fv)),
                    (base + v0 * res + u1, fu * (1.0 - fv)),
                    (base + v1 * res + u0, (1.0 - fu) * fv),
                    (base + v1 * res + u1, fu * fv),
                ]);
            }
        }
        let src = self.data(planes);
        let mut out = vec![0.0; q * 3 * c];
        for (t, tap) in taps.iter().enumerate() {
            let dst = &mut out[t * c..(t + 1) * c];
            for &(cell, w) in tap {
                for (o, f) in dst.iter_mut().zip(&src[cell * c..(cell + 1) * c]) {
                    *o += w * f;
                }
            }
        }
        let ng = self.ng(planes);
        Ok(self.push(
            Tensor::from_parts(vec![q, 3 * c], out),
            Op::TriplaneSample {
                planes,
                taps,
                channels: c,
            },
            ng,
        ))
    }

    /// Mean of source rows per destination row; destinations nobody writes
    /// to stay zero. `pairs` lists `(source_row, destination_row)`.
    pub fn scatter_mean(&mut self, x: Var, pairs: &[(usize, usize)], out_rows: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut counts = vec![0usize; out_rows];
        for &(s, d) in pairs {
            if s >= r || d >= out_rows {
                return Err(TensorError::invalid("scatter_mean", format!("pair ({s}, {d}) out of range")));
            }
            counts[d] += 1;
        }
        let src = self.data(x);
        let mut out = vec![0.0; out_rows * c];
        for &(s, d) in pairs {
            let w = 1.0 / counts[d] as f64;
            for j in 0..c {
                out[d * c + j] += w * src[s * c + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![out_rows, c], out),
            Op::ScatterMean {
                x,
                pairs: pairs.to_vec(),
                counts,
            },
            ng,
        ))
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("output must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves = HashMap::new();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match node.op {
                Op::Leaf | Op::Param => {
                    leaves.insert(i, g);
                }
                _ => self.backprop(i, &g, &mut grads),
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients { leaves, params })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let n = self.dims(b).1;
                acc(a, &mut |ga| gemm(m, n, k, g, false, self.data(b), true, 1.0, ga));
                acc(b, &mut |gb| gemm(k, m, n, self.data(a), true, g, false, 1.0, gb));
            }
            &Op::Transpose(x) => {
                let (r, c) = self.dims(x);
                acc(x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| add_into(gb, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                acc(a, &mut |ga| {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((o, gv), x) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * x;
                    }
                });
            }
            &Op::AddRow(a, row) => {
                let c = self.dims(a).1;
                acc(a, &mut |ga| add_into(ga, g));
                acc(row, &mut |gr| {
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                });
            }
            &Op::Affine(x, s) => acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += s * v)),
            &Op::Relu(x) => {
                let xd = self.data(x);
                acc(x, &mut |gx| {
                    for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            &Op::Gelu(x) => {
                let xd = self.data(x);
                acc(x, &mut |gx| {
                    for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gv * gelu_grad(*xv);
                    }
                });
            }
            &Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(x, &mut |gx| {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            &Op::Tanh(x) => {
                let y = node.value.data();
                acc(x, &mut |gx| {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                });
            }
            &Op::Exp(x) => {
                let y = node.value.data();
                acc(x, &mut |gx| {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv;
                    }
                });
            }
            &Op::SoftmaxRows(x) => {
                let (r, c) = self.dims(x);
                let y = node.value.data();
                acc(x, &mut |gx| {
                    for i in 0..r {
                        let ys = &y[i * c..(i + 1) * c];
                        let gs = &g[i * c..(i + 1) * c];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = self.dims(*x);
                let gs = self.data(*gain);
                acc(*gain, &mut |gg| {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for chunk in g.chunks(c) {
                        add_into(gb, chunk);
                    }
                });
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..c {
                            let d = g[i * c + j] * gs[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * c + j];
                        }
                        let inv = 1.0 / c as f64;
                        for j in 0..c {
                            let d = g[i * c + j] * gs[j];
                            gx[i * c + j] += rstd[i] * (d - inv * sum_d - xhat[i * c + j] * inv * sum_dx);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    acc(p, &mut |gp| {
                        for i in 0..rows {
                            add_into(&mut gp[i * c..(i + 1) * c], &g[i * total + off..i * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(p, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            &Op::SliceCols { x, start } => {
                let (r, c) = self.dims(x);
                let len = node.value.cols();
                acc(x, &mut |gx| {
                    for i in 0..r {
                        add_into(&mut gx[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                    }
                });
            }
            &Op::SliceRows { x, start } => {
                let c = self.dims(x).1;
                acc(x, &mut |gx| add_into(&mut gx[start * c..start * c + g.len()], g));
            }
            Op::GatherRows { x, index } => {
                let c = self.dims(*x).1;
                acc(*x, &mut |gx| {
                    for (k, &row) in index.iter().enumerate() {
                        add_into(&mut gx[row * c..(row + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            &Op::Reshape(x) => acc(x, &mut |gx| add_into(gx, g)),
            &Op::Sum(x) => acc(x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            &Op::Mean(x) => {
                let n = self.nodes[x.0].value.len().max(1) as f64;
                acc(x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::WeightedMse {
                x,
                target,
                weights,
                norm,
            } => {
                let xd = self.data(*x);
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[0] * 2.0 * weights[j] * (xd[j] - target[j]) / norm;
                    }
                });
            }
            Op::L1 { x, target } => {
                let xd = self.data(*x);
                let n = xd.len().max(1) as f64;
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        let d = xd[j] - target[j];
                        let s = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        gx[j] += g[0] * s / n;
                    }
                });
            }
            Op::BceLogits {
                x,
                labels,
                weights,
                norm,
            } => {
                let xd = self.data(*x);
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[0] * weights[j] * (sigmoid(xd[j]) - labels[j]) / norm;
                    }
                });
            }
            Op::KlRows { p, q, weights, norm } => {
                let (r, c) = self.dims(*p);
                let (pd, qd) = (self.data(*p), self.data(*q));
                let mut gp_all = vec![0.0; r * c];
                let mut gq_all = vec![0.0; r * c];
                for i in 0..r {
                    if weights[i] == 0.0 {
                        continue;
                    }
                    let lp = log_softmax(&pd[i * c..(i + 1) * c]);
                    let lq = log_softmax(&qd[i * c..(i + 1) * c]);
                    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
                    let s = g[0] * weights[i] / norm;
                    for j in 0..c {
                        let pj = lp[j].exp();
                        gp_all[i * c + j] = s * pj * ((lp[j] - lq[j]) - kl);
                        gq_all[i * c + j] = s * (lq[j].exp() - pj);
                    }
                }
                acc(*p, &mut |gp| add_into(gp, &gp_all));
                acc(*q, &mut |gq| add_into(gq, &gq_all));
            }
            Op::GaussianKl { mu, logvar } => {
                let rows = self.dims(*mu).0.max(1) as f64;
                let (md, ld) = (self.data(*mu), self.data(*logvar));
                acc(*mu, &mut |gm| {
                    for j in 0..gm.len() {
                        gm[j] += g[0] * md[j] / rows;
                    }
                });
                acc(*logvar, &mut |gl| {
                    for j in 0..gl.len() {
                        gl[j] += g[0] * 0.5 * (ld[j].exp() - 1.0) / rows;
                    }
                });
            }
            Op::NegDistance { x, m } => {
                let (b, d) = self.dims(*x);
                let n = self.dims(*m).0;
                let (xd, md) = (self.data(*x), self.data(*m));
                let y = node.value.data();
                // d(-‖x-m‖)/dx = -(x-m)/‖x-m‖; zero at coincidence
                let mut gx_all = vec![0.0; b * d];
                let mut gm_all = vec![0.0; n * d];
                for i in 0..b {
                    for l in 0..n {
                        let dist = -y[i * n + l];
                        if dist == 0.0 {
                            continue;
                        }
                        let s = g[i * n + l] / dist;
                        for k in 0..d {
                            let diff = xd[i * d + k] - md[l * d + k];
                            gx_all[i * d + k] -= s * diff;
                            gm_all[l * d + k] += s * diff;
                        }
                    }
                }
                acc(*x, &mut |gx| add_into(gx, &gx_all));
                acc(*m, &mut |gm| add_into(gm, &gm_all));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            } => {
                let (dq, dk, dv) = attention_backward(
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    self.dims(*q).0,
                    self.dims(*k).0,
                    self.dims(*q).1,
                    *heads,
                    layout,
                    probs,
                    g,
                );
                acc(*q, &mut |gq| add_into(gq, &dq));
                acc(*k, &mut |gk| add_into(gk, &dk));
                acc(*v, &mut |gv| add_into(gv, &dv));
            }
            Op::TriplaneSample { planes, taps, channels } => {
                let c = *channels;
                acc(*planes, &mut |gp| {
                    for (t, tap) in taps.iter().enumerate() {
                        let src = &g[t * c..(t + 1) * c];
                        for &(cell, w) in tap {
                            for (o, s) in gp[cell * c..(cell + 1) * c].iter_mut().zip(src) {
                                *o += w * s;
                            }
                        }
                    }
                });
            }
            Op::ScatterMean { x, pairs, counts } => {
                let c = self.dims(*x).1;
                acc(*x, &mut |gx| {
                    for &(s, d) in pairs {
                        let w = 1.0 / counts[d] as f64;
                        for j in 0..c {
                            gx[s * c + j] += w * g[d * c + j];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Forward attention; returns the output and the per-(segment, head)
/// probability blocks.
fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    d: usize,
    heads: usize,
    layout: &AttentionLayout,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut probs = Vec::with_capacity(layout.queries.len() * heads);
    for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
        let (lq, lk) = (qs.len(), ks.len());
        for h in 0..heads {
            let off = h * dh;
            let mut a = vec![0.0; lq * lk];
            if lk > 0 {
                for (ii, qi) in qs.clone().enumerate() {
                    let row = &mut a[ii * lk..(ii + 1) * lk];
                    for (jj, kj) in ks.clone().enumerate() {
                        let mut s = 0.0;
                        for c in 0..dh {
                            s += q[qi * d + off + c] * k[kj * d + off + c];
                        }
                        row[jj] = s * scale;
                    }
                    softmax_in_place(row);
                    for (jj, kj) in ks.clone().enumerate() {
                        let w = row[jj];
                        for c in 0..dh {
                            out[qi * d + off + c] += w * v[kj * d + off + c];
                        }
                    }
                }
            }
            probs.push(a);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
    layout: &AttentionLayout,
    probs: &[Vec<f64>],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    for (s, (qs, ks)) in layout.queries.iter().zip(&layout.keys).enumerate() {
        let (lq, lk) = (qs.len(), ks.len());
        if lk == 0 {
            continue;
        }
        for h in 0..heads {
            let off = h * dh;
            let a = &probs[s * heads + h];
            for (ii, qi) in qs.clone().enumerate() {
                let arow = &a[ii * lk..(ii + 1) * lk];
                let gout = &g[qi * d + off..qi * d + off + dh];
                // dA and dV
                let mut da = vec![0.0; lk];
                for (jj, kj) in ks.clone().enumerate() {
                    let mut s_ = 0.0;
                    for c in 0..dh {
                        s_ += gout[c] * v[kj * d + off + c];
                        dv[kj * d + off + c] += arow[jj] * gout[c];
                    }
                    da[jj] = s_;
                }
                let dot: f64 = arow.iter().zip(&da).map(|(x, y)| x * y).sum();
                for (jj, kj) in ks.clone().enumerate() {
                    let ds = arow[jj] * (da[jj] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[qi * d + off + c] += ds * k[kj * d + off + c];
                        dk[kj * d + off + c] += ds * q[qi * d + off + c];
                    }
                }
            }
            let _ = lq;
        }
    }
    (dq, dk, dv)
}
