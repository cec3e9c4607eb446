//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Graph::backward`] walks the tape once in
//! reverse, accumulating gradients additively where a value fans out, and
//! returns parameter gradients aligned with the [`ParamStore`].

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{matmul, matmul_t, t_matmul, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    GatherRows(NodeId, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    WeightedPick(NodeId, Vec<(usize, usize, f64)>),
    L2NormalizeRows(NodeId, Vec<f64>),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax outside any graph.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x.require_matrix("softmax")?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        softmax_row(x.row_slice(i), &mut out[i * c..(i + 1) * c]);
    }
    Tensor::matrix(r, c, out)
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A constant input (no gradient flows out of the graph through it).
    pub fn input(&mut self, t: Tensor) -> Result<NodeId> {
        t.require_matrix("input")?;
        self.push(t, Op::Input, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        self.params.get(id).require_matrix("param")?;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.require_matrix("matmul")?;
        let (k2, n) = vb.require_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", va, vb));
        }
        let out = Tensor::matrix(m, n, matmul(va.data(), vb.data(), m, k, n))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.require_matrix("matmul_t")?;
        let (n, k2) = vb.require_matrix("matmul_t")?;
        if k != k2 {
            return Err(shape_err("matmul_t", va, vb));
        }
        let out = Tensor::matrix(m, n, matmul_t(va.data(), vb.data(), m, k, n))?;
        self.push(out, Op::MatMulT(a, b), "matmul_t")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a `[1, n]` row to every row of `a[m, n]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        let (m, n) = va.require_matrix("add_row")?;
        if vr.shape() != [1, n] {
            return Err(shape_err("add_row", va, vr));
        }
        let r = vr.data();
        let mut data = va.data().to_vec();
        for i in 0..m {
            for (d, b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *d += b;
            }
        }
        self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, row), "add_row")
    }

    /// `x @ w + b`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let va = self.value(a);
        let data = va.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let data = va.data().iter().map(|&v| gelu(v)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Gelu(a), "gelu")
    }

    /// Row-wise layer normalization with a `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let (m, n) = vx.require_matrix("layer_norm")?;
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.shape() != [1, n] || vb.shape() != [1, n] {
            return Err(shape_err("layer_norm", vx, vg));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = vx.row_slice(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let out = softmax_rows(self.value(a))?;
        self.push(out, Op::Softmax(a), "softmax")
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = va.require_matrix("log_softmax")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            log_softmax_row(va.row_slice(i), &mut out[i * c..(i + 1) * c]);
        }
        self.push(Tensor::matrix(r, c, out)?, Op::LogSoftmax(a), "log_softmax")
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        let (m, n) = va.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: va.shape().to_vec(),
                    right: vec![r],
                });
            }
            data.extend_from_slice(va.row_slice(r));
        }
        let out = Tensor::matrix(rows.len(), n, data)?;
        self.push(out, Op::GatherRows(a, rows.to_vec()), "gather_rows")
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.require_matrix("concat_rows")?;
            if c != n {
                return Err(shape_err("concat_rows", self.value(parts[0]), v));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (m, n) = va.require_matrix("slice_cols")?;
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                left: va.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&va.row_slice(i)[start..start + len]);
        }
        let out = Tensor::matrix(m, len, data)?;
        self.push(out, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.require_matrix("concat_cols")?;
            if r != m {
                return Err(shape_err("concat_cols", self.value(parts[0]), v));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Divides each row by its Euclidean norm (floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let (m, n) = va.require_matrix("l2_normalize_rows")?;
        let mut norms = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = va.row_slice(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            data.extend(row.iter().map(|v| v / norm));
            norms.push(norm);
        }
        let out = Tensor::matrix(m, n, data)?;
        self.push(out, Op::L2NormalizeRows(a, norms), "l2_normalize_rows")
    }

    /// Scalar `sum_k w_k * a[r_k, c_k]` with constant weights.
    pub fn weighted_pick(&mut self, a: NodeId, picks: &[(usize, usize, f64)]) -> Result<NodeId> {
        let va = self.value(a);
        let (m, n) = va.require_matrix("weighted_pick")?;
        let mut total = 0.0;
        for &(r, c, w) in picks {
            if r >= m || c >= n {
                return Err(Error::Shape {
                    op: "weighted_pick",
                    left: va.shape().to_vec(),
                    right: vec![r, c],
                });
            }
            total += w * va.get(r, c);
        }
        self.push(Tensor::scalar(total), Op::WeightedPick(a, picks.to_vec()), "weighted_pick")
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads = self.params.zero_grads();
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut adj[id.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = self.value(NodeId(idx));
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads.get_mut(*p).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = (va.rows(), va.cols());
                    let n = vb.cols();
                    let da = matmul_t(g.data(), vb.data(), m, n, k);
                    let db = t_matmul(va.data(), g.data(), m, k, n);
                    acc(&mut adj, *a, Tensor::matrix(m, k, da)?);
                    acc(&mut adj, *b, Tensor::matrix(k, n, db)?);
                }
                Op::MatMulT(a, b) => {
                    // out[m,n] = a[m,k] b[n,k]^T
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = (va.rows(), va.cols());
                    let n = vb.rows();
                    let da = matmul(g.data(), vb.data(), m, n, k);
                    let db = t_matmul(g.data(), va.data(), m, n, k);
                    acc(&mut adj, *a, Tensor::matrix(m, k, da)?);
                    acc(&mut adj, *b, Tensor::matrix(n, k, db)?);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::AddRow(a, row) => {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, v) in dr.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                    acc(&mut adj, *row, Tensor::row(dr));
                    acc(&mut adj, *a, g);
                }
                Op::Scale(a, f) => {
                    let data = g.data().iter().map(|v| v * f).collect();
                    acc(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(d, &x)| d * gelu_grad(x))
                        .collect();
                    acc(&mut adj, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (m, n) = (g.rows(), g.cols());
                    let vg = self.value(*gain).data();
                    let mut dx = vec![0.0; m * n];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for i in 0..m {
                        let gr = g.row_slice(i);
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * vg[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                            dgain[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * vg[j];
                            dx[i * n + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    acc(&mut adj, *x, Tensor::matrix(m, n, dx)?);
                    acc(&mut adj, *gain, Tensor::row(dgain));
                    acc(&mut adj, *bias, Tensor::row(dbias));
                }
                Op::Softmax(a) => {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[i * n + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
                Op::LogSoftmax(a) => {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gr = g.row_slice(i);
                        let sum: f64 = gr.iter().sum();
                        for j in 0..n {
                            dx[i * n + j] = gr[j] - y[j].exp() * sum;
                        }
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
                Op::GatherRows(a, rows) => {
                    let va = self.value(*a);
                    let (m, n) = (va.rows(), va.cols());
                    let mut dx = vec![0.0; m * n];
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, v) in dx[r * n..(r + 1) * n].iter_mut().zip(g.row_slice(k)) {
                            *d += v;
                        }
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
                Op::ConcatRows(parts) => {
                    let n = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let data = g.data()[offset * n..(offset + r) * n].to_vec();
                        acc(&mut adj, p, Tensor::matrix(r, n, data)?);
                        offset += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let (m, n) = (va.rows(), va.cols());
                    let len = g.cols();
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        dx[i * n + start..i * n + start + len].copy_from_slice(g.row_slice(i));
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(m * c);
                        for i in 0..m {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        acc(&mut adj, p, Tensor::matrix(m, c, data)?);
                        offset += c;
                    }
                }
                Op::WeightedPick(a, picks) => {
                    let va = self.value(*a);
                    let (m, n) = (va.rows(), va.cols());
                    let s = g.item();
                    let mut dx = vec![0.0; m * n];
                    for &(r, c, w) in picks {
                        dx[r * n + c] += w * s;
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
                Op::L2NormalizeRows(a, norms) => {
                    // dy -> (dy - y (y . dy)) / |x|
                    let (m, n) = (g.rows(), g.cols());
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[i * n + j] = (gr[j] - y[j] * dot) / norms[i];
                        }
                    }
                    acc(&mut adj, *a, Tensor::matrix(m, n, dx)?);
                }
            }
        }
        for t in grads.iter() {
            if !t.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        Ok(grads)
    }
}
