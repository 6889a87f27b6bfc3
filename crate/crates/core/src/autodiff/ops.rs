use std::f64::consts::FRAC_2_PI;

use super::{Broadcast, Node, NodeId, Op, Tape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Probabilities entering the cross-entropy are clamped to this margin.
pub const PROB_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mod1(x: f64) -> f64 {
    x - x.floor()
}

/// Triangle wave with period 2π and range [−1, 1], in phase with `sin`.
pub fn triangle(x: f64) -> f64 {
    FRAC_2_PI * x.sin().asin()
}

fn triangle_grad(x: f64) -> f64 {
    let c = x.cos();
    if c > 0.0 {
        FRAC_2_PI
    } else if c < 0.0 {
        -FRAC_2_PI
    } else {
        0.0
    }
}

fn broadcast_of(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::None)
    } else if b.1 == 1 && b.0 == a.0 {
        Ok(Broadcast::Col)
    } else if b.0 == 1 && b.1 == a.1 {
        Ok(Broadcast::Row)
    } else {
        Err(Error::Dimension { op, lhs: a, rhs: b })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = a.shape();
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(ad.len());
    for r in 0..rows {
        for c in 0..cols {
            let bv = match mode {
                Broadcast::None => bd[r * cols + c],
                Broadcast::Col => bd[r],
                Broadcast::Row => bd[c],
            };
            out.push(f(ad[r * cols + c], bv));
        }
    }
    Tensor::from_raw(rows, cols, out)
}

/// Sums a full-shape gradient down to the right operand's broadcast shape.
fn reduce_broadcast(g: Tensor, mode: Broadcast) -> Tensor {
    let (rows, cols) = g.shape();
    match mode {
        Broadcast::None => g,
        Broadcast::Col => {
            let d = g.data();
            let out = (0..rows).map(|r| d[r * cols..(r + 1) * cols].iter().sum()).collect();
            Tensor::from_raw(rows, 1, out)
        }
        Broadcast::Row => {
            let d = g.data();
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, v) in out.iter_mut().zip(&d[r * cols..(r + 1) * cols]) {
                    *o += v;
                }
            }
            Tensor::from_raw(1, cols, out)
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_column(logits: &Tensor, c: usize) -> Vec<f64> {
    let col = logits.col_values(c);
    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Tape {
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = gemm(self.value(a), false, self.value(b), false);
        Ok(self.record(Op::MatMul(a, b), value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        make: fn(NodeId, NodeId, Broadcast) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let mode = broadcast_of(name, self.shape(a), self.shape(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), mode, f);
        Ok(self.record(make(a, b, mode), value))
    }

    /// Elementwise sum. `b` may be a column (`r×1`) or row (`1×c`) vector.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("hadamard", a, b, Op::Hadamard, |x, y| x * y)
    }

    /// Stacks inputs vertically; all must share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat-rows needs at least one input"));
        }
        for &p in parts {
            self.check(p)?;
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(Error::Dimension {
                    op: "concat-rows",
                    lhs: self.shape(parts[0]),
                    rhs: s,
                });
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.record(Op::ConcatRows(parts.to_vec()), Tensor::from_raw(rows, cols, data)))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.value(a).map(f);
        self.record(op, value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// `x − floor(x)`.
    pub fn mod1(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Mod1(a), mod1)
    }

    /// `(2/π)·asin(sin x)`.
    pub fn triangle(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Triangle(a), triangle)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.check(a)?;
        let (rows, cols) = self.shape(a);
        if start > end || end > rows {
            return Err(Error::Dimension {
                op: "slice",
                lhs: (rows, cols),
                rhs: (start, end),
            });
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        Ok(self.record(Op::SliceRows(a, start, end), Tensor::from_raw(end - start, cols, data)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.record(Op::SumAll(a), Tensor::from_raw(1, 1, vec![total]))
    }

    /// Summed binary cross-entropy `−Σ y·ln p + (1−y)·ln(1−p)` over every entry
    /// of `probs`, with probabilities clamped to `[1e-12, 1 − 1e-12]`.
    pub fn bce(&mut self, probs: NodeId, targets: &[f64]) -> Result<NodeId> {
        self.check(probs)?;
        let p = self.value(probs);
        if p.len() != targets.len() {
            return Err(Error::Dimension {
                op: "bce",
                lhs: p.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let total = p.data().iter().zip(targets).map(|(&p, &y)| bce_value(p, y)).sum();
        Ok(self.record(Op::Bce(probs, targets.to_vec()), Tensor::from_raw(1, 1, vec![total])))
    }

    /// Summed softmax cross-entropy; column `j` of `logits` is scored against
    /// class `targets[j]`. Uses the log-sum-exp form.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let (classes, batch) = self.shape(logits);
        if batch != targets.len() {
            return Err(Error::Dimension {
                op: "softmax-xent",
                lhs: (classes, batch),
                rhs: (1, targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::contract(format!(
                "target class {bad} out of range for {classes} classes"
            )));
        }
        let value = self.value(logits);
        let total = targets
            .iter()
            .enumerate()
            .map(|(c, &t)| {
                let col = value.col_values(c);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - col[t]
            })
            .sum();
        Ok(self.record(
            Op::SoftmaxXent(logits, targets.to_vec()),
            Tensor::from_raw(1, 1, vec![total]),
        ))
    }

    /// Looks up rows of a `vocab×dim` table; the result is `dim×ids.len()`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.check(table)?;
        let (vocab, dim) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::contract(format!(
                "row id {bad} out of range for a table with {vocab} rows"
            )));
        }
        let t = self.value(table);
        let mut out = vec![0.0; dim * ids.len()];
        for (j, &id) in ids.iter().enumerate() {
            for d in 0..dim {
                out[d * ids.len() + j] = t.get(id, d);
            }
        }
        Ok(self.record(
            Op::GatherRows(table, ids.to_vec()),
            Tensor::from_raw(dim, ids.len(), out),
        ))
    }

    /// Pushes `upstream` (the gradient of `node`) to its differentiable parents.
    pub(super) fn propagate(&self, node: &Node, upstream: &Tensor, grads: &mut [Option<Tensor>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let elementwise = |a: NodeId, d: &dyn Fn(f64, f64) -> f64| -> Tensor {
            // d(input, output) -> local derivative
            let x = self.value(a).data();
            let y = node.value.data();
            let out = upstream
                .data()
                .iter()
                .zip(x.iter().zip(y))
                .map(|(g, (&xi, &yi))| g * d(xi, yi))
                .collect();
            Tensor::from_raw(upstream.rows(), upstream.cols(), out)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, gemm(upstream, false, self.value(*b), true));
                }
                if wants(*b) {
                    accumulate(grads, *b, gemm(self.value(*a), true, upstream, false));
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    accumulate(grads, *a, upstream.clone());
                }
                if wants(*b) {
                    let mut g = reduce_broadcast(upstream.clone(), *mode);
                    if sign < 0.0 {
                        g = g.map(|v| -v);
                    }
                    accumulate(grads, *b, g);
                }
            }
            Op::Hadamard(a, b, mode) => {
                if wants(*a) {
                    let g = zip_broadcast(upstream, self.value(*b), *mode, |g, y| g * y);
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    let full = Tensor::from_raw(
                        upstream.rows(),
                        upstream.cols(),
                        upstream
                            .data()
                            .iter()
                            .zip(self.value(*a).data())
                            .map(|(g, x)| g * x)
                            .collect(),
                    );
                    accumulate(grads, *b, reduce_broadcast(full, *mode));
                }
            }
            Op::ConcatRows(parts) => {
                let cols = upstream.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if wants(p) {
                        let slice = upstream.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(grads, p, Tensor::from_raw(rows, cols, slice));
                    }
                    offset += rows;
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    accumulate(grads, *a, elementwise(*a, &|_, y| y * (1.0 - y)));
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    accumulate(grads, *a, elementwise(*a, &|_, y| 1.0 - y * y));
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let g = elementwise(*a, &|x, _| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(grads, *a, g);
                }
            }
            Op::Sin(a) => {
                if wants(*a) {
                    accumulate(grads, *a, elementwise(*a, &|x, _| x.cos()));
                }
            }
            Op::Cos(a) => {
                if wants(*a) {
                    accumulate(grads, *a, elementwise(*a, &|x, _| -x.sin()));
                }
            }
            Op::Mod1(a) => {
                if wants(*a) {
                    accumulate(grads, *a, upstream.clone());
                }
            }
            Op::Triangle(a) => {
                if wants(*a) {
                    accumulate(grads, *a, elementwise(*a, &|x, _| triangle_grad(x)));
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    accumulate(grads, *a, upstream.map(|g| c * g));
                }
            }
            Op::OneMinus(a) => {
                if wants(*a) {
                    accumulate(grads, *a, upstream.map(|g| -g));
                }
            }
            Op::SliceRows(a, start, end) => {
                if wants(*a) {
                    let (rows, cols) = self.shape(*a);
                    let mut g = vec![0.0; rows * cols];
                    g[start * cols..end * cols].copy_from_slice(upstream.data());
                    accumulate(grads, *a, Tensor::from_raw(rows, cols, g));
                }
            }
            Op::SumAll(a) => {
                if wants(*a) {
                    let (rows, cols) = self.shape(*a);
                    accumulate(grads, *a, Tensor::filled(rows, cols, upstream.item()));
                }
            }
            Op::Bce(a, targets) => {
                if wants(*a) {
                    let g0 = upstream.item();
                    let p = self.value(*a);
                    let out = p
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| g0 * bce_grad(p, y))
                        .collect();
                    accumulate(grads, *a, Tensor::from_raw(p.rows(), p.cols(), out));
                }
            }
            Op::SoftmaxXent(a, targets) => {
                if wants(*a) {
                    let g0 = upstream.item();
                    let logits = self.value(*a);
                    let (classes, batch) = logits.shape();
                    let mut out = vec![0.0; classes * batch];
                    for (c, &t) in targets.iter().enumerate() {
                        let probs = softmax_column(logits, c);
                        for (r, p) in probs.into_iter().enumerate() {
                            let onehot = if r == t { 1.0 } else { 0.0 };
                            out[r * batch + c] = g0 * (p - onehot);
                        }
                    }
                    accumulate(grads, *a, Tensor::from_raw(classes, batch, out));
                }
            }
            Op::GatherRows(a, ids) => {
                if wants(*a) {
                    let (vocab, dim) = self.shape(*a);
                    let mut g = vec![0.0; vocab * dim];
                    for (j, &id) in ids.iter().enumerate() {
                        for d in 0..dim {
                            g[id * dim + d] += upstream.get(d, j);
                        }
                    }
                    accumulate(grads, *a, Tensor::from_raw(vocab, dim, g));
                }
            }
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn bce_value(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}
