//! Wengert-list reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value. A node requires
//! a gradient iff one of its inputs does, so frozen subgraphs cost nothing on
//! the backward sweep.

use super::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// `arg[s * d + c]` is the winning input row, `usize::MAX` for an empty segment.
    SegmentMax { input: Var, arg: Vec<usize> },
    SegmentMean { input: Var, segments: Vec<(usize, usize)> },
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    name: &'static str,
}

/// Records a computation for a single backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf; it tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, "leaf")
    }

    /// Registers a leaf that never tracks gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut value = t;
        value.clear_grad();
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Name of the first recorded operation whose output is not finite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.name)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        self.nodes.push(Node { value, op, name });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn derived(&mut self, value: Tensor, inputs: &[Var], op: Op, name: &'static str) -> Var {
        let rg = inputs.iter().any(|&v| self.tracks(v));
        self.push(value.with_requires_grad(rg), op, name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::matmul(self.value(a), self.value(b))?;
        Ok(self.derived(value, &[a, b], Op::MatMul(a, b), "matmul"))
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.derived(value, &[a, b], Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.derived(value, &[a, b], Op::Sub(a, b), "sub"))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.derived(value, &[a, b], Op::Mul(a, b), "mul"))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= c);
        self.derived(value, &[a], Op::Scale(a, c), "scale")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = super::gelu(self.value(a));
        self.derived(value, &[a], Op::Gelu(a), "gelu")
    }

    /// `[a ‖ b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = ta.matrix_dims("concat_cols")?;
        let (m2, q) = tb.matrix_dims("concat_cols")?;
        if m != m2 {
            return Err(Error::shape("concat_cols", ta.shape(), tb.shape()));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&ta.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&tb.data()[i * q..(i + 1) * q]);
        }
        let value = Tensor::new([m, p + q], data)?;
        Ok(self.derived(value, &[a, b], Op::ConcatCols(a, b), "concat_cols"))
    }

    /// Rows of `a` followed by rows of `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).vstack(self.value(b))?;
        Ok(self.derived(value, &[a, b], Op::ConcatRows(a, b), "concat_rows"))
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        let (m, _) = ta.matrix_dims("gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", ta.shape(), &[bad]));
        }
        let value = ta.select_rows(&idx);
        Ok(self.derived(value, &[a], Op::GatherRows(a, idx), "gather_rows"))
    }

    /// Column-wise max within consecutive row segments `(start, len)`.
    /// An empty segment yields a zero row. Ties go to the lowest row.
    pub fn segment_max(&mut self, a: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let ta = self.value(a);
        let (m, d) = ta.matrix_dims("segment_max")?;
        check_segments("segment_max", segments, m)?;
        let mut data = Vec::with_capacity(segments.len() * d);
        let mut arg = Vec::with_capacity(segments.len() * d);
        for &(start, len) in segments {
            match kernels::rowwise_max((start..start + len).map(|r| ta.row(r)), d) {
                Some((vals, local)) => {
                    data.extend(vals);
                    arg.extend(local.into_iter().map(|r| start + r));
                }
                None => {
                    data.extend(std::iter::repeat_n(0.0, d));
                    arg.extend(std::iter::repeat_n(usize::MAX, d));
                }
            }
        }
        let value = Tensor::new([segments.len(), d], data)?;
        Ok(self.derived(value, &[a], Op::SegmentMax { input: a, arg }, "segment_max"))
    }

    /// Column-wise max of `[k×d]` as a `[1×d]` row; rejects `k = 0`.
    pub fn rowwise_max(&mut self, a: Var) -> Result<Var> {
        let k = self.value(a).rows();
        if k == 0 {
            return Err(Error::Empty { op: "rowwise_max" });
        }
        self.segment_max(a, &[(0, k)])
    }

    /// Column-wise mean within row segments; an empty segment yields zeros.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<(usize, usize)>) -> Result<Var> {
        let ta = self.value(a);
        let (m, d) = ta.matrix_dims("segment_mean")?;
        check_segments("segment_mean", &segments, m)?;
        let mut data = vec![0.0; segments.len() * d];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                continue;
            }
            let out = &mut data[s * d..(s + 1) * d];
            for r in start..start + len {
                for (o, v) in out.iter_mut().zip(ta.row(r)) {
                    *o += v;
                }
            }
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new([segments.len(), d], data)?;
        Ok(self.derived(value, &[a], Op::SegmentMean { input: a, segments }, "segment_mean"))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let value = Tensor::new([1], vec![s]).expect("scalar");
        self.derived(value, &[a], Op::Sum(a), "sum")
    }

    /// Mean softmax cross-entropy of `logits[B×C]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (b, c) = tl.matrix_dims("cross_entropy")?;
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", tl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape("cross_entropy", tl.shape(), &[bad]));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &tl.data()[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - mx).exp() / z;
            }
            loss += z.ln() + mx - row[label];
        }
        let value = Tensor::new([1], vec![loss / b as f64])?;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.derived(value, &[logits], op, "cross_entropy"))
    }

    /// Propagates gradients from a scalar node back to every tracked input.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::shape("backward", lt.shape(), &[1]));
        }
        let tracked = lt.requires_grad();
        self.grads.iter_mut().for_each(|g| *g = None);
        if !tracked {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        if !self.tracks(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        self.propagate_op(&op, g);
        self.nodes[i].op = op;
    }

    fn propagate_op(&mut self, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).matrix_dims("matmul").expect("recorded");
                let n = self.value(b).cols();
                if self.tracks(a) {
                    let da = kernels::matmul_nt(g, self.value(b).data(), m, n, k);
                    self.accumulate(a, da);
                }
                if self.tracks(b) {
                    let db = kernels::matmul_tn(self.value(a).data(), g, m, k, n);
                    self.accumulate(b, db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let da = g.iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Scale(a, c) => {
                self.accumulate(a, g.iter().map(|v| v * c).collect());
            }
            &Op::Gelu(a) => {
                let da = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(gv, &x)| gv * kernels::gelu_grad(x))
                    .collect();
                self.accumulate(a, da);
            }
            &Op::ConcatCols(a, b) => {
                let p = self.value(a).cols();
                let q = self.value(b).cols();
                let m = self.value(a).rows();
                let mut da = Vec::with_capacity(m * p);
                let mut db = Vec::with_capacity(m * q);
                for r in 0..m {
                    let row = &g[r * (p + q)..(r + 1) * (p + q)];
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::ConcatRows(a, b) => {
                let split = self.value(a).numel();
                self.accumulate(a, g[..split].to_vec());
                self.accumulate(b, g[split..].to_vec());
            }
            Op::GatherRows(a, idx) => {
                let a = *a;
                let d = self.value(a).cols();
                let mut da = vec![0.0; self.value(a).numel()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..d {
                        da[src * d + c] += g[r * d + c];
                    }
                }
                self.accumulate(a, da);
            }
            Op::SegmentMax { input, arg } => {
                let input = *input;
                let d = self.value(input).cols();
                let mut da = vec![0.0; self.value(input).numel()];
                for (slot, &row) in arg.iter().enumerate() {
                    if row != usize::MAX {
                        da[row * d + slot % d] += g[slot];
                    }
                }
                self.accumulate(input, da);
            }
            Op::SegmentMean { input, segments } => {
                let input = *input;
                let d = self.value(input).cols();
                let mut da = vec![0.0; self.value(input).numel()];
                for (s, &(start, len)) in segments.iter().enumerate() {
                    if len == 0 {
                        continue;
                    }
                    let inv = 1.0 / len as f64;
                    for r in start..start + len {
                        for c in 0..d {
                            da[r * d + c] += g[s * d + c] * inv;
                        }
                    }
                }
                self.accumulate(input, da);
            }
            &Op::Sum(a) => {
                let n = self.value(a).numel();
                self.accumulate(a, vec![g[0]; n]);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let b = labels.len();
                let c = probs.len() / b.max(1);
                let scale = g[0] / b as f64;
                let mut da: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    da[i * c + l] -= scale;
                }
                self.accumulate(logits, da);
            }
        }
    }
}

fn check_segments(op: &'static str, segments: &[(usize, usize)], rows: usize) -> Result<()> {
    for &(start, len) in segments {
        if start + len > rows {
            return Err(Error::shape(op, &[rows], &[start, len]));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap().with_requires_grad(true)
    }

    #[test]
    fn matmul_backward_both_inputs() {
        let mut tape = Tape::new();
        let a = tape.leaf(&param(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.leaf(&param(&[vec![1.0], vec![1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn max_tie_routes_to_lowest_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[vec![2.0, 2.0], vec![2.0, 2.0]]));
        let m = tape.rowwise_max(x).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 2.0]);
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_segment_is_zero_and_gradient_free() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[vec![1.0, -1.0]]));
        let m = tape.segment_max(x, &[(0, 0), (0, 1)]).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 0.0, 1.0, -1.0]);
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn frozen_inputs_get_no_grad() {
        let mut tape = Tape::new();
        let w = tape.leaf(&Tensor::identity(2));
        let x = tape.leaf(&param(&[vec![1.0, 2.0]]));
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(w).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(&param(&[vec![0.0, 0.0], vec![0.0, 0.0]]));
        let l = tape.cross_entropy(z, &[0, 1]).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[-0.25, 0.25, 0.25, -0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[vec![1.0, 2.0]]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_is_attributed() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[vec![1e200]]));
        let y = tape.mul(x, x).unwrap();
        let _ = tape.sum(y);
        assert_eq!(tape.first_non_finite(), Some("mul"));
    }
}
