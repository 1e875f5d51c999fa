//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op records its inputs and output on a linear tape; `backward` replays
//! the tape in reverse, accumulating one adjoint per node. The tape is rebuilt
//! for every training step, so memory stays bounded by a single forward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;

/// Recorded primitive ops. Input handles refer to earlier nodes only.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k] x [k,n] -> [m,n]
    Matmul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Square { a: NodeId },
    Scale { a: NodeId, c: f64 },
    /// [r,c] + broadcast of a length-c row over every row
    AddRow { a: NodeId, row: NodeId },
    /// [r,c] * broadcast of a length-c row over every row
    MulRow { a: NodeId, row: NodeId },
    Silu { a: NodeId },
    Gelu { a: NodeId },
    /// Per-row normalization with a learned length-c gain
    LayerNorm { a: NodeId, gain: NodeId },
    /// Stable softmax applied to each row of a 2-D tensor
    SoftmaxRows { a: NodeId },
    /// Sum of all entries -> scalar
    SumAll { a: NodeId },
    /// Concatenation along the last axis, row by row
    Concat { a: NodeId, b: NodeId },
    /// Contiguous slice [start, start+len) of the flattened buffer, as [1, len]
    Narrow { a: NodeId, start: usize, len: usize },
    Reshape { a: NodeId, shape: Vec<usize> },
    /// Row `idx` of a 2-D table, as a [1, cols] tensor
    SelectRow { table: NodeId, idx: usize },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Define-by-run tape. Create one per forward pass (or per training step).
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), grads: Vec::new() }
    }

    /// Register a non-differentiable input.
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>) -> NodeId {
        self.push(value.into(), Op::Leaf)
    }

    /// Register a differentiable parameter; it will receive an adjoint in
    /// `backward` even when detached from the loss (zeros in that case).
    pub fn param(&mut self, value: Arc<Tensor>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push(id);
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        id
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op)?;
        Ok(self.push(Arc::new(value), op))
    }

    // ── Recorded ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Matmul { a, b })
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose { a })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul { a, b })
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.record(Op::Square { a }).expect("square is shape-preserving")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.record(Op::Scale { a, c }).expect("scale is shape-preserving")
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::AddRow { a, row })
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::MulRow { a, row })
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.record(Op::Silu { a }).expect("silu is shape-preserving")
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.record(Op::Gelu { a }).expect("gelu is shape-preserving")
    }

    /// Per-row mean/variance normalization with a learned gain:
    /// y = gain * (x - mean) / sqrt(var + eps), row by row.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId) -> Result<NodeId> {
        self.record(Op::LayerNorm { a, gain })
    }

    /// Stable softmax over each row; rows sum to 1.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.record(Op::SoftmaxRows { a }).expect("softmax is shape-preserving")
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.record(Op::SumAll { a }).expect("sum is always valid")
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Concat { a, b })
    }

    pub fn narrow(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::Narrow { a, start, len })
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.record(Op::Reshape { a, shape })
    }

    pub fn select_row(&mut self, table: NodeId, idx: usize) -> Result<NodeId> {
        self.record(Op::SelectRow { table, idx })
    }

    // ── Forward evaluation (shared by recording and replay) ──────────

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        match *op {
            Op::Leaf => Err(Error::Contract("eval of a leaf".into())),
            Op::Matmul { a, b } => val(a).matmul(val(b)),
            Op::Transpose { a } => val(a).transposed(),
            Op::Add { a, b } => val(a).add(val(b)),
            Op::Sub { a, b } => val(a).sub(val(b)),
            Op::Mul { a, b } => val(a).mul(val(b)),
            Op::Square { a } => Ok(val(a).map(|x| x * x)),
            Op::Scale { a, c } => Ok(val(a).scale(c)),
            Op::AddRow { a, row } => row_broadcast(val(a), val(row), |x, r| x + r),
            Op::MulRow { a, row } => row_broadcast(val(a), val(row), |x, r| x * r),
            Op::Silu { a } => Ok(val(a).map(tensor::silu)),
            Op::Gelu { a } => Ok(val(a).map(tensor::gelu)),
            Op::LayerNorm { a, gain } => layer_norm_forward(val(a), val(gain)),
            Op::SoftmaxRows { a } => {
                let av = val(a);
                let (rows, cols) = av.rows_cols();
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    let row = tensor::softmax_slice(&av.data()[i * cols..(i + 1) * cols]);
                    out[i * cols..(i + 1) * cols].copy_from_slice(&row);
                }
                Tensor::new(av.shape().to_vec(), out)
            }
            Op::SumAll { a } => Ok(Tensor::scalar(val(a).sum())),
            Op::Concat { a, b } => {
                let (av, bv) = (val(a), val(b));
                let (ra, ca) = av.rows_cols();
                let (rb, cb) = bv.rows_cols();
                if ra != rb {
                    return Err(Error::Dimension(format!("concat: {ra} rows vs {rb} rows")));
                }
                let mut out = Vec::with_capacity(av.numel() + bv.numel());
                for i in 0..ra {
                    out.extend_from_slice(&av.data()[i * ca..(i + 1) * ca]);
                    out.extend_from_slice(&bv.data()[i * cb..(i + 1) * cb]);
                }
                Tensor::new(vec![ra, ca + cb], out)
            }
            Op::Narrow { a, start, len } => {
                let av = val(a);
                if start + len > av.numel() {
                    return Err(Error::Dimension(format!(
                        "narrow [{start}, {}) out of {} entries",
                        start + len,
                        av.numel()
                    )));
                }
                Tensor::new(vec![1, len], av.data()[start..start + len].to_vec())
            }
            Op::Reshape { a, ref shape } => val(a).reshaped(shape.clone()),
            Op::SelectRow { table, idx } => {
                let tv = val(table);
                let (rows, cols) = tv.rows_cols();
                if idx >= rows {
                    return Err(Error::Contract(format!("select_row {idx} out of {rows} rows")));
                }
                Tensor::new(vec![1, cols], tv.data()[idx * cols..(idx + 1) * cols].to_vec())
            }
        }
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-replay the tape from a scalar loss, accumulating adjoints.
    /// After this returns, `grad` yields d(loss)/d(node) for every parameter.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = self.grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &out_grad, &op)?;
            self.grads[idx] = Some(out_grad);
        }

        // Detached parameters still report a gradient of zeros.
        for pid in self.params.clone() {
            if self.grads[pid.0].is_none() {
                self.grads[pid.0] = Some(Tensor::zeros(self.value(pid).shape().to_vec()));
            }
        }
        Ok(())
    }

    /// Adjoint of a node after `backward`. Parameters always have one;
    /// interior nodes only if the loss depends on them.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn accumulate(&mut self, id: NodeId, grad: Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *e += g;
                }
            }
            None => self.grads[id.0] = Some(grad),
        }
    }

    fn propagate(&mut self, out_idx: usize, g: &Tensor, op: &Op) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                // dA = dC B^T, dB = A^T dC
                let bt = self.value(b).transposed()?;
                let at = self.value(a).transposed()?;
                let da = g.matmul(&bt)?;
                let db = at.matmul(g)?;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Transpose { a } => {
                self.accumulate(a, g.transposed()?);
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                let da = g.mul(self.value(b))?;
                let db = g.mul(self.value(a))?;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Square { a } => {
                let da = g.mul(&self.value(a).scale(2.0))?;
                self.accumulate(a, da);
            }
            Op::Scale { a, c } => {
                self.accumulate(a, g.scale(c));
            }
            Op::AddRow { a, row } => {
                self.accumulate(a, g.clone());
                let dr = colsum_like(g, self.value(row));
                self.accumulate(row, dr);
            }
            Op::MulRow { a, row } => {
                let av = self.value(a).clone();
                let rv = self.value(row).clone();
                let (rows, cols) = av.rows_cols();
                let mut da = vec![0.0; rows * cols];
                let mut dr = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let gij = g.data()[i * cols + j];
                        da[i * cols + j] = gij * rv.data()[j];
                        dr[j] += gij * av.data()[i * cols + j];
                    }
                }
                self.accumulate(a, Tensor::new(av.shape().to_vec(), da)?);
                self.accumulate(row, Tensor::new(rv.shape().to_vec(), dr)?);
            }
            Op::Silu { a } => {
                let da = pointwise_grad(g, self.value(a), tensor::silu_deriv);
                self.accumulate(a, da);
            }
            Op::Gelu { a } => {
                let da = pointwise_grad(g, self.value(a), tensor::gelu_deriv);
                self.accumulate(a, da);
            }
            Op::LayerNorm { a, gain } => {
                let (da, dg) = layer_norm_backward(g, self.value(a), self.value(gain))?;
                self.accumulate(a, da);
                self.accumulate(gain, dg);
            }
            Op::SoftmaxRows { a } => {
                let y = self.nodes[out_idx].value.clone();
                let (rows, cols) = y.rows_cols();
                let mut da = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yr = &y.data()[i * cols..(i + 1) * cols];
                    let gr = &g.data()[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yj, &gj)| yj * gj).sum();
                    for j in 0..cols {
                        da[i * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, Tensor::new(y.shape().to_vec(), da)?);
            }
            Op::SumAll { a } => {
                let shape = self.value(a).shape().to_vec();
                let n: usize = shape.iter().product();
                let da = Tensor::new(shape, vec![g.item(); n])?;
                self.accumulate(a, da);
            }
            Op::Concat { a, b } => {
                let (ra, ca) = self.value(a).rows_cols();
                let (_, cb) = self.value(b).rows_cols();
                let total = ca + cb;
                let mut da = vec![0.0; ra * ca];
                let mut db = vec![0.0; ra * cb];
                for i in 0..ra {
                    da[i * ca..(i + 1) * ca].copy_from_slice(&g.data()[i * total..i * total + ca]);
                    db[i * cb..(i + 1) * cb]
                        .copy_from_slice(&g.data()[i * total + ca..(i + 1) * total]);
                }
                let ash = self.value(a).shape().to_vec();
                let bsh = self.value(b).shape().to_vec();
                self.accumulate(a, Tensor::new(ash, da)?);
                self.accumulate(b, Tensor::new(bsh, db)?);
            }
            Op::Narrow { a, start, len } => {
                let shape = self.value(a).shape().to_vec();
                let n: usize = shape.iter().product();
                let mut da = vec![0.0; n];
                da[start..start + len].copy_from_slice(g.data());
                self.accumulate(a, Tensor::new(shape, da)?);
            }
            Op::Reshape { a, .. } => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, Tensor::new(shape, g.data().to_vec())?);
            }
            Op::SelectRow { table, idx } => {
                let tv = self.value(table);
                let (rows, cols) = tv.rows_cols();
                let mut dt = vec![0.0; rows * cols];
                dt[idx * cols..(idx + 1) * cols].copy_from_slice(g.data());
                self.accumulate(table, Tensor::new(tv.shape().to_vec(), dt)?);
            }
        }
        Ok(())
    }

    /// Recompute every non-leaf node from its recorded op and compare with the
    /// stored value bit-for-bit. Exercises the replay invariant.
    pub fn replay_matches(&self) -> bool {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            match self.eval(&node.op) {
                Ok(recomputed) if recomputed.data() == node.value.data() => {}
                _ => return false,
            }
        }
        true
    }
}

fn row_broadcast(a: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (rows, cols) = a.rows_cols();
    if row.numel() != cols {
        return Err(Error::Dimension(format!(
            "row broadcast: row of {} entries against {} columns",
            row.numel(),
            cols
        )));
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = f(a.data()[i * cols + j], row.data()[j]);
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

fn layer_norm_forward(a: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let (rows, cols) = a.rows_cols();
    if gain.numel() != cols {
        return Err(Error::Dimension(format!(
            "layer_norm: gain of {} entries against {} columns",
            gain.numel(),
            cols
        )));
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let x = &a.data()[i * cols..(i + 1) * cols];
        let (mean, inv_std) = row_moments(x);
        for j in 0..cols {
            out[i * cols + j] = gain.data()[j] * (x[j] - mean) * inv_std;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

fn row_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

fn pointwise_grad(g: &Tensor, input: &Tensor, deriv: impl Fn(f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(input.data())
        .map(|(&gi, &xi)| gi * deriv(xi))
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

fn colsum_like(g: &Tensor, row: &Tensor) -> Tensor {
    let (rows, cols) = g.rows_cols();
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j] += g.data()[i * cols + j];
        }
    }
    Tensor::new(row.shape().to_vec(), out).expect("shape preserved")
}

fn layer_norm_backward(g: &Tensor, x: &Tensor, gain: &Tensor) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = x.rows_cols();
    let n = cols as f64;
    let mut dx = vec![0.0; rows * cols];
    let mut dgain = vec![0.0; cols];
    for i in 0..rows {
        let xr = &x.data()[i * cols..(i + 1) * cols];
        let gr = &g.data()[i * cols..(i + 1) * cols];
        let (mean, inv_std) = row_moments(xr);
        let xhat: Vec<f64> = xr.iter().map(|&v| (v - mean) * inv_std).collect();
        // d xhat = g * gain; dgain += g * xhat
        let dxh: Vec<f64> = gr.iter().zip(gain.data()).map(|(&gi, &w)| gi * w).collect();
        for j in 0..cols {
            dgain[j] += gr[j] * xhat[j];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / n;
        let mean_dxh_xhat = dxh.iter().zip(&xhat).map(|(&d, &h)| d * h).sum::<f64>() / n;
        for j in 0..cols {
            dx[i * cols + j] = inv_std * (dxh[j] - mean_dxh - xhat[j] * mean_dxh_xhat);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(gain.shape().to_vec(), dgain)?,
    ))
}
