//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records the forward pass once; [`Tape::refresh`] re-runs it
//! in place after leaf updates, and [`Tape::backward`] accumulates exact
//! gradients for every node. The op set is just what the meta-model needs:
//! dense products, broadcasts, gather/segment-mean for message passing,
//! and the pointwise pieces of the training loss.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Mat {
        Mat { rows: data.len(), cols: 1, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Row-broadcast add of a `1 x c` bias.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    GatherRows(NodeId, Vec<u32>),
    /// Mean of input rows per segment; segments without rows stay zero.
    SegmentMean(NodeId, Vec<u32>, usize),
    ConcatCols(NodeId, NodeId),
    SumAll(NodeId),
}

pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Mat>,
    grads: Vec<Mat>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { ops: Vec::new(), vals: Vec::new(), grads: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.vals[id]
    }

    pub fn grad(&self, id: NodeId) -> &Mat {
        &self.grads[id]
    }

    /// Mutable access to a leaf's value, for in-place parameter updates.
    pub fn leaf_mut(&mut self, id: NodeId) -> &mut Mat {
        assert!(matches!(self.ops[id], Op::Leaf), "only leaves may be written");
        &mut self.vals[id]
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        let id = self.ops.len();
        self.grads.push(Mat::zeros(value.rows, value.cols));
        self.vals.push(value);
        self.ops.push(op);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.vals[a], &self.vals[b]);
        assert_eq!(va.cols, vb.rows, "matmul shape mismatch");
        let out = Mat::zeros(va.rows, vb.cols);
        let id = self.push(Op::MatMul(a, b), out);
        self.recompute(id);
        id
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.vals[a], &self.vals[bias]);
        assert!(vb.rows == 1 && vb.cols == va.cols, "bias must be 1 x cols");
        let out = Mat::zeros(va.rows, va.cols);
        let id = self.push(Op::AddRow(a, bias), out);
        self.recompute(id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.vals[a].same_shape(&self.vals[b]));
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::Add(a, b), out);
        self.recompute(id);
        id
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.vals[a].same_shape(&self.vals[b]));
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::Sub(a, b), out);
        self.recompute(id);
        id
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(self.vals[a].same_shape(&self.vals[b]));
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::MulElem(a, b), out);
        self.recompute(id);
        id
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::Scale(a, factor), out);
        self.recompute(id);
        id
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::Relu(a), out);
        self.recompute(id);
        id
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = Mat::zeros(self.vals[a].rows, self.vals[a].cols);
        let id = self.push(Op::Sigmoid(a), out);
        self.recompute(id);
        id
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<u32>) -> NodeId {
        let va = &self.vals[a];
        assert!(rows.iter().all(|&r| (r as usize) < va.rows));
        let out = Mat::zeros(rows.len(), va.cols);
        let id = self.push(Op::GatherRows(a, rows), out);
        self.recompute(id);
        id
    }

    pub fn segment_mean(&mut self, a: NodeId, segments: Vec<u32>, out_rows: usize) -> NodeId {
        let va = &self.vals[a];
        assert_eq!(segments.len(), va.rows);
        assert!(segments.iter().all(|&s| (s as usize) < out_rows));
        let out = Mat::zeros(out_rows, va.cols);
        let id = self.push(Op::SegmentMean(a, segments, out_rows), out);
        self.recompute(id);
        id
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.vals[a], &self.vals[b]);
        assert_eq!(va.rows, vb.rows);
        let out = Mat::zeros(va.rows, va.cols + vb.cols);
        let id = self.push(Op::ConcatCols(a, b), out);
        self.recompute(id);
        id
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let id = self.push(Op::SumAll(a), Mat::zeros(1, 1));
        self.recompute(id);
        id
    }

    /// Re-run the whole forward pass in place. Call after editing leaves.
    pub fn refresh(&mut self) {
        for id in 0..self.ops.len() {
            self.recompute(id);
        }
    }

    fn recompute(&mut self, id: NodeId) {
        if matches!(self.ops[id], Op::Leaf) {
            return;
        }
        let (before, rest) = self.vals.split_at_mut(id);
        let out = &mut rest[0];
        match &self.ops[id] {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (ma, mb) = (&before[*a], &before[*b]);
                out.fill(0.0);
                for i in 0..ma.rows {
                    let arow = &ma.data[i * ma.cols..(i + 1) * ma.cols];
                    let orow = &mut out.data[i * mb.cols..(i + 1) * mb.cols];
                    for (k, &aik) in arow.iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let brow = &mb.data[k * mb.cols..(k + 1) * mb.cols];
                        for (o, &bkj) in orow.iter_mut().zip(brow) {
                            *o += aik * bkj;
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                let (ma, mb) = (&before[*a], &before[*bias]);
                for i in 0..ma.rows {
                    for j in 0..ma.cols {
                        out.data[i * ma.cols + j] = ma.data[i * ma.cols + j] + mb.data[j];
                    }
                }
            }
            Op::Add(a, b) => {
                for ((o, &x), &y) in out.data.iter_mut().zip(&before[*a].data).zip(&before[*b].data)
                {
                    *o = x + y;
                }
            }
            Op::Sub(a, b) => {
                for ((o, &x), &y) in out.data.iter_mut().zip(&before[*a].data).zip(&before[*b].data)
                {
                    *o = x - y;
                }
            }
            Op::MulElem(a, b) => {
                for ((o, &x), &y) in out.data.iter_mut().zip(&before[*a].data).zip(&before[*b].data)
                {
                    *o = x * y;
                }
            }
            Op::Scale(a, f) => {
                for (o, &x) in out.data.iter_mut().zip(&before[*a].data) {
                    *o = f * x;
                }
            }
            Op::Relu(a) => {
                for (o, &x) in out.data.iter_mut().zip(&before[*a].data) {
                    *o = if x > 0.0 { x } else { 0.0 };
                }
            }
            Op::Sigmoid(a) => {
                for (o, &x) in out.data.iter_mut().zip(&before[*a].data) {
                    *o = sigmoid(x);
                }
            }
            Op::GatherRows(a, rows) => {
                let ma = &before[*a];
                for (i, &r) in rows.iter().enumerate() {
                    let src = &ma.data[r as usize * ma.cols..(r as usize + 1) * ma.cols];
                    out.data[i * ma.cols..(i + 1) * ma.cols].copy_from_slice(src);
                }
            }
            Op::SegmentMean(a, segments, out_rows) => {
                let ma = &before[*a];
                out.fill(0.0);
                let mut counts = vec![0u32; *out_rows];
                for (i, &s) in segments.iter().enumerate() {
                    counts[s as usize] += 1;
                    let src = &ma.data[i * ma.cols..(i + 1) * ma.cols];
                    let dst = &mut out.data[s as usize * ma.cols..(s as usize + 1) * ma.cols];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d += x;
                    }
                }
                for (s, &c) in counts.iter().enumerate() {
                    if c > 1 {
                        let inv = 1.0 / c as f64;
                        for v in &mut out.data[s * ma.cols..(s + 1) * ma.cols] {
                            *v *= inv;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ma, mb) = (&before[*a], &before[*b]);
                let cols = ma.cols + mb.cols;
                for i in 0..ma.rows {
                    out.data[i * cols..i * cols + ma.cols]
                        .copy_from_slice(&ma.data[i * ma.cols..(i + 1) * ma.cols]);
                    out.data[i * cols + ma.cols..(i + 1) * cols]
                        .copy_from_slice(&mb.data[i * mb.cols..(i + 1) * mb.cols]);
                }
            }
            Op::SumAll(a) => {
                out.data[0] = before[*a].data.iter().sum();
            }
        }
    }

    /// Accumulate gradients of a scalar output into every node.
    pub fn backward(&mut self, output: NodeId) {
        assert_eq!(self.vals[output].data.len(), 1, "backward needs a scalar");
        for g in &mut self.grads {
            g.fill(0.0);
        }
        self.grads[output].data[0] = 1.0;
        for id in (0..self.ops.len()).rev() {
            let (gbefore, grest) = self.grads.split_at_mut(id);
            let gout = &grest[0];
            if gout.data.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.ops[id] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ma, mb) = (&self.vals[*a], &self.vals[*b]);
                    // dA += dC B^T, dB += A^T dC; (a, b) < id so both slots
                    // live in gbefore, but they may alias each other.
                    for i in 0..ma.rows {
                        for k in 0..ma.cols {
                            let mut acc = 0.0;
                            let brow = &mb.data[k * mb.cols..(k + 1) * mb.cols];
                            let grow = &gout.data[i * mb.cols..(i + 1) * mb.cols];
                            for (&bkj, &gij) in brow.iter().zip(grow) {
                                acc += bkj * gij;
                            }
                            gbefore[*a].data[i * ma.cols + k] += acc;
                        }
                    }
                    for k in 0..mb.rows {
                        for j in 0..mb.cols {
                            let mut acc = 0.0;
                            for i in 0..ma.rows {
                                acc += ma.data[i * ma.cols + k] * gout.data[i * mb.cols + j];
                            }
                            gbefore[*b].data[k * mb.cols + j] += acc;
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    let cols = self.vals[*a].cols;
                    for (i, &g) in gout.data.iter().enumerate() {
                        gbefore[*a].data[i] += g;
                        gbefore[*bias].data[i % cols] += g;
                    }
                }
                Op::Add(a, b) => {
                    for (i, &g) in gout.data.iter().enumerate() {
                        gbefore[*a].data[i] += g;
                        gbefore[*b].data[i] += g;
                    }
                }
                Op::Sub(a, b) => {
                    for (i, &g) in gout.data.iter().enumerate() {
                        gbefore[*a].data[i] += g;
                        gbefore[*b].data[i] -= g;
                    }
                }
                Op::MulElem(a, b) => {
                    let (va, vb) = (&self.vals[*a], &self.vals[*b]);
                    for (i, &g) in gout.data.iter().enumerate() {
                        gbefore[*a].data[i] += g * vb.data[i];
                        gbefore[*b].data[i] += g * va.data[i];
                    }
                }
                Op::Scale(a, f) => {
                    for (i, &g) in gout.data.iter().enumerate() {
                        gbefore[*a].data[i] += f * g;
                    }
                }
                Op::Relu(a) => {
                    let v = &self.vals[id];
                    for (i, &g) in gout.data.iter().enumerate() {
                        if v.data[i] > 0.0 {
                            gbefore[*a].data[i] += g;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let v = &self.vals[id];
                    for (i, &g) in gout.data.iter().enumerate() {
                        let s = v.data[i];
                        gbefore[*a].data[i] += g * s * (1.0 - s);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let cols = self.vals[*a].cols;
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..cols {
                            gbefore[*a].data[r as usize * cols + j] += gout.data[i * cols + j];
                        }
                    }
                }
                Op::SegmentMean(a, segments, out_rows) => {
                    let cols = self.vals[*a].cols;
                    let mut counts = vec![0u32; *out_rows];
                    for &s in segments {
                        counts[s as usize] += 1;
                    }
                    for (i, &s) in segments.iter().enumerate() {
                        let inv = 1.0 / counts[s as usize] as f64;
                        for j in 0..cols {
                            gbefore[*a].data[i * cols + j] +=
                                inv * gout.data[s as usize * cols + j];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.vals[*a].cols;
                    let cb = self.vals[*b].cols;
                    for i in 0..self.vals[*a].rows {
                        for j in 0..ca {
                            gbefore[*a].data[i * ca + j] += gout.data[i * (ca + cb) + j];
                        }
                        for j in 0..cb {
                            gbefore[*b].data[i * cb + j] += gout.data[i * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g = gout.data[0];
                    for x in &mut gbefore[*a].data {
                        *x += g;
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Outcome of [`descend`].
#[derive(Debug, Clone)]
pub struct DescendReport {
    pub best_loss: f64,
    pub epochs: usize,
    /// Loss went non-finite; best parameters are from before that point.
    pub diverged: bool,
}

/// Plain gradient descent on a scalar tape output.
///
/// Keeps the best-loss parameter values seen and restores them into the
/// tape before returning. Stops early once the relative improvement stays
/// under `rel_tol` for `patience` consecutive epochs, or immediately when
/// the loss stops being finite.
pub fn descend(
    tape: &mut Tape,
    loss: NodeId,
    params: &[NodeId],
    learning_rate: f64,
    max_epochs: usize,
    patience: usize,
    rel_tol: f64,
) -> DescendReport {
    tape.refresh();
    let mut best_loss = tape.value(loss).data[0];
    let mut best: Vec<Mat> = params.iter().map(|&p| tape.value(p).clone()).collect();
    let mut stale = 0usize;
    let mut epochs = 0usize;
    let mut diverged = !best_loss.is_finite();
    if !diverged {
        for _ in 0..max_epochs {
            tape.backward(loss);
            for &p in params {
                let step: Vec<f64> =
                    tape.grad(p).data.iter().map(|g| g * learning_rate).collect();
                let leaf = tape.leaf_mut(p);
                for (w, s) in leaf.data.iter_mut().zip(step) {
                    *w -= s;
                }
            }
            tape.refresh();
            epochs += 1;
            let current = tape.value(loss).data[0];
            if !current.is_finite() {
                diverged = true;
                break;
            }
            let scale = best_loss.abs().max(1e-12);
            if best_loss - current > rel_tol * scale {
                stale = 0;
            } else {
                stale += 1;
            }
            if current < best_loss {
                best_loss = current;
                for (slot, &p) in best.iter_mut().zip(params) {
                    slot.data.copy_from_slice(&tape.value(p).data);
                }
            }
            if stale >= patience {
                break;
            }
        }
    }
    for (slot, &p) in best.iter().zip(params) {
        tape.leaf_mut(p).data.copy_from_slice(&slot.data);
    }
    tape.refresh();
    DescendReport { best_loss, epochs, diverged }
}
