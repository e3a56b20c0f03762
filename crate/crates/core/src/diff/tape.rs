use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::linalg::{gemm_into, View};
use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    Scale,
    Sigmoid,
    Tanh,
    Relu,
    Concat,
    Gather,
    Broadcast,
    Softmax,
    LogSoftmax,
    LayerNorm,
    Unfold,
    PiecewiseMax,
    SegmentSoftmax,
    SegmentSum,
    Dropout,
    Nll,
    SumSquares,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add_bias",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Concat => "concat",
            OpKind::Gather => "gather_rows",
            OpKind::Broadcast => "broadcast_row",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Unfold => "unfold",
            OpKind::PiecewiseMax => "piecewise_max",
            OpKind::SegmentSoftmax => "segment_softmax",
            OpKind::SegmentSum => "segment_weighted_sum",
            OpKind::Dropout => "dropout",
            OpKind::Nll => "nll",
            OpKind::SumSquares => "sum_squares",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        const ALL: [OpKind; 23] = [
            OpKind::Leaf,
            OpKind::MatMul,
            OpKind::AddBias,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::Sigmoid,
            OpKind::Tanh,
            OpKind::Relu,
            OpKind::Concat,
            OpKind::Gather,
            OpKind::Broadcast,
            OpKind::Softmax,
            OpKind::LogSoftmax,
            OpKind::LayerNorm,
            OpKind::Unfold,
            OpKind::PiecewiseMax,
            OpKind::SegmentSoftmax,
            OpKind::SegmentSum,
            OpKind::Dropout,
            OpKind::Nll,
            OpKind::SumSquares,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Gather {
        table: NodeId,
        idx: Vec<usize>,
    },
    Broadcast(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Unfold {
        x: NodeId,
        spans: Vec<Range<usize>>,
        window: usize,
    },
    PiecewiseMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    SegmentSoftmax {
        x: NodeId,
        groups: Vec<Range<usize>>,
    },
    SegmentSum {
        weights: NodeId,
        x: NodeId,
        groups: Vec<Range<usize>>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Nll {
        x: NodeId,
        targets: Vec<usize>,
    },
    SumSquares(NodeId),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input | Op::Param(_) => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Concat(_) => OpKind::Concat,
            Op::Gather { .. } => OpKind::Gather,
            Op::Broadcast(_) => OpKind::Broadcast,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Unfold { .. } => OpKind::Unfold,
            Op::PiecewiseMax { .. } => OpKind::PiecewiseMax,
            Op::SegmentSoftmax { .. } => OpKind::SegmentSoftmax,
            Op::SegmentSum { .. } => OpKind::SegmentSum,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Nll { .. } => OpKind::Nll,
            Op::SumSquares(_) => OpKind::SumSquares,
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, whose values stay in the store.
    value: Vec<T>,
    op: Op<T>,
}

/// Record of a forward computation.
pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Shape { op, left, right }
}

fn softmax_row<T: Real>(src: &[T], dst: &mut [T]) {
    let max = src.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Test hook: scales the backward contribution of every primitive of
    /// `kind` by 1.5 so gradient checks can be shown to catch it.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        let n = &self.nodes[id.0];
        match n.op {
            Op::Param(pid) => self.params.get(pid).values(),
            _ => &n.value,
        }
    }

    /// Row `r` of a node's value.
    pub fn row(&self, id: NodeId, r: usize) -> &[T] {
        let cols = self.nodes[id.0].cols;
        &self.value(id)[r * cols..(r + 1) * cols]
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[0]
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> NodeId {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Result<NodeId> {
        if values.len() != rows * cols {
            return Err(shape_err("input", (rows, cols), (values.len(), 1)));
        }
        Ok(self.push(rows, cols, values, Op::Input))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let (rows, cols) = self.params.get(id).rows_cols();
        self.push(rows, cols, Vec::new(), Op::Param(id))
    }

    /// `op(a) @ op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let va = View::new(self.value(a), ar, ac).maybe_t(ta);
        let vb = View::new(self.value(b), br, bc).maybe_t(tb);
        if va.cols != vb.rows {
            return Err(shape_err("matmul", (va.rows, va.cols), (vb.rows, vb.cols)));
        }
        let (m, n) = (va.rows, vb.cols);
        let mut out = vec![T::zero(); m * n];
        gemm_into(&mut out, va, vb, T::zero());
        Ok(self.push(m, n, out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// Adds a `1 × c` bias to every row.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(shape_err("add_bias", (r, c), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        Ok(self.push(r, c, out, Op::AddBias { x, bias }))
    }

    /// `x @ w + bias` for every row of `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, bias)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(sa.0, sa.1, out, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * s).collect();
        self.push(r, c, out, Op::Scale(x, s))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(r, c, out, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, T::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// `g ∘ a + (1 − g) ∘ b`, composed from primitives as `b + g ∘ (a − b)`.
    pub fn gate_mix(&mut self, g: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
        let diff = self.sub(a, b)?;
        let scaled = self.mul(g, diff)?;
        self.add(b, scaled)
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.row(p, r));
            }
        }
        Ok(self.push(rows, cols, out, Op::Concat(parts.to_vec())))
    }

    /// Embedding lookup: row `i` of the output is row `idx[i]` of `table`.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (tr, tc) = self.shape(table);
        let mut out = Vec::with_capacity(idx.len() * tc);
        for &i in idx {
            if i >= tr {
                return Err(shape_err("gather_rows", (tr, tc), (i, tc)));
            }
            out.extend_from_slice(self.row(table, i));
        }
        Ok(self.push(
            idx.len(),
            tc,
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Repeats a single row `rows` times.
    pub fn broadcast_row(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if r != 1 {
            return Err(shape_err("broadcast_row", (r, c), (1, c)));
        }
        let row = self.value(x);
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        Ok(self.push(rows, c, out, Op::Broadcast(x)))
    }

    fn check_finite(&self, x: NodeId, name: &'static str) -> Result<()> {
        if self.value(x).iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(name));
        }
        Ok(())
    }

    /// Softmax over the last dimension, max-shifted.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_finite(x, "softmax")?;
        let (r, c) = self.shape(x);
        let mut out = vec![T::zero(); r * c];
        for (src, dst) in self.value(x).chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        Ok(self.push(r, c, out, Op::Softmax(x)))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_finite(x, "log_softmax")?;
        let (r, c) = self.shape(x);
        let mut out = vec![T::zero(); r * c];
        for (src, dst) in self.value(x).chunks(c).zip(out.chunks_mut(c)) {
            let max = src.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + src.iter().map(|&s| (s - max).exp()).sum::<T>().ln();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        Ok(self.push(r, c, out, Op::LogSoftmax(x)))
    }

    /// Row-wise layer normalization with population variance and `eps`
    /// inside the square root.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId, eps: T) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) {
            return Err(shape_err("layer_norm", (r, c), self.shape(gain)));
        }
        if self.shape(shift) != (1, c) {
            return Err(shape_err("layer_norm", (r, c), self.shape(shift)));
        }
        let n = T::from_usize(c).unwrap();
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        let (g, s) = (self.value(gain), self.value(shift));
        for (row, src) in self.value(x).chunks(c).enumerate() {
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            rstd[row] = inv;
            for j in 0..c {
                let h = (src[j] - mean) * inv;
                xhat[row * c + j] = h;
                out[row * c + j] = h * g[j] + s[j];
            }
        }
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
        ))
    }

    /// Sliding-window unfold for a same-padded 1-D convolution. `spans` are
    /// disjoint row ranges (one per sentence) covering the rows of `x`; a
    /// window never reads across a span boundary, out-of-span taps are zero.
    /// Output row `i` is `[x[i−h], …, x[i+h']]` flattened, `window·c` wide.
    pub fn unfold(&mut self, x: NodeId, spans: &[Range<usize>], window: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if window == 0 || spans.iter().any(|s| s.end > r || s.start > s.end) {
            return Err(shape_err("unfold", (r, c), (window, spans.len())));
        }
        let left = (window - 1) / 2;
        let xv = self.value(x);
        let mut out = vec![T::zero(); r * window * c];
        for span in spans {
            for i in span.clone() {
                for w in 0..window {
                    let src = i as isize + w as isize - left as isize;
                    if src < span.start as isize || src >= span.end as isize {
                        continue;
                    }
                    let src = src as usize;
                    let dst = i * window * c + w * c;
                    out[dst..dst + c].copy_from_slice(&xv[src * c..(src + 1) * c]);
                }
            }
        }
        Ok(self.push(
            r,
            window * c,
            out,
            Op::Unfold {
                x,
                spans: spans.to_vec(),
                window,
            },
        ))
    }

    /// Piecewise max pooling. Each entry of `pieces` yields one output row
    /// holding `[max over piece 0; max over piece 1; max over piece 2]`, each
    /// block `c` wide. Empty pieces contribute zeros.
    pub fn piecewise_max(&mut self, x: NodeId, pieces: &[[Range<usize>; 3]]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if pieces.iter().flatten().any(|p| p.end > r) {
            return Err(shape_err("piecewise_max", (r, c), (pieces.len(), 3)));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); pieces.len() * 3 * c];
        let mut argmax = vec![usize::MAX; pieces.len() * 3 * c];
        for (s, segs) in pieces.iter().enumerate() {
            for (k, seg) in segs.iter().enumerate() {
                let base = s * 3 * c + k * c;
                for j in 0..c {
                    let mut best: Option<(usize, T)> = None;
                    for row in seg.clone() {
                        let v = xv[row * c + j];
                        if best.map_or(true, |(_, b)| v > b) {
                            best = Some((row, v));
                        }
                    }
                    if let Some((row, v)) = best {
                        out[base + j] = v;
                        argmax[base + j] = row;
                    }
                }
            }
        }
        Ok(self.push(pieces.len(), 3 * c, out, Op::PiecewiseMax { x, argmax }))
    }

    /// Softmax of a column vector within each row group.
    pub fn segment_softmax(&mut self, x: NodeId, groups: &[Range<usize>]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if c != 1 || groups.iter().any(|g| g.end > r || g.is_empty()) {
            return Err(shape_err("segment_softmax", (r, c), (groups.len(), 1)));
        }
        self.check_finite(x, "segment_softmax")?;
        let mut out = vec![T::zero(); r];
        for g in groups {
            softmax_row(&self.value(x)[g.clone()], &mut out[g.clone()]);
        }
        Ok(self.push(
            r,
            1,
            out,
            Op::SegmentSoftmax {
                x,
                groups: groups.to_vec(),
            },
        ))
    }

    /// Output row `g` is `Σ_{i ∈ groups[g]} weights[i] · x[i]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: NodeId,
        x: NodeId,
        groups: &[Range<usize>],
    ) -> Result<NodeId> {
        let (wr, wc) = self.shape(weights);
        let (r, c) = self.shape(x);
        if wc != 1 || wr != r || groups.iter().any(|g| g.end > r) {
            return Err(shape_err("segment_weighted_sum", (wr, wc), (r, c)));
        }
        let (wv, xv) = (self.value(weights), self.value(x));
        let mut out = vec![T::zero(); groups.len() * c];
        for (gi, g) in groups.iter().enumerate() {
            let dst = &mut out[gi * c..(gi + 1) * c];
            for i in g.clone() {
                let w = wv[i];
                for (d, &v) in dst.iter_mut().zip(&xv[i * c..(i + 1) * c]) {
                    *d += w * v;
                }
            }
        }
        Ok(self.push(
            groups.len(),
            c,
            out,
            Op::SegmentSum {
                weights,
                x,
                groups: groups.to_vec(),
            },
        ))
    }

    /// Multiplies by a fixed mask. For inverted dropout the mask holds
    /// `0` or `1/(1−p)`.
    pub fn dropout(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if mask.len() != r * c {
            return Err(shape_err("dropout", (r, c), (mask.len(), 1)));
        }
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(r, c, out, Op::Dropout { x, mask }))
    }

    /// Mean negative log-likelihood: `−(1/rows) Σ_r x[r, targets[r]]` where
    /// `x` holds log-probabilities.
    pub fn nll(&mut self, x: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if targets.len() != r || r == 0 {
            return Err(shape_err("nll", (r, c), (targets.len(), 1)));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange {
                label: t,
                classes: c,
            });
        }
        let xv = self.value(x);
        let sum: T = targets.iter().enumerate().map(|(i, &t)| xv[i * c + t]).sum();
        let out = vec![-sum / T::from_usize(r).unwrap()];
        Ok(self.push(
            1,
            1,
            out,
            Op::Nll {
                x,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().map(|&v| v * v).sum();
        self.push(1, 1, vec![s], Op::SumSquares(x))
    }

    /// Reverse pass from a `1 × 1` node. Visits every recorded primitive
    /// at most once, newest first.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.params.len());
        for idx in (0..=loss.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= T::lit(1.5));
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) {
        let (rows, cols) = (node.rows, node.cols);
        let mut sink = Sink {
            tape: self,
            grads,
            out,
        };
        match &node.op {
            Op::Input => {}
            Op::Param(pid) => {
                let dst = sink.out.slot(pid.0, g.len());
                for (d, &v) in dst.iter_mut().zip(g) {
                    *d += v;
                }
            }
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.shape(a);
                let (br, bc) = self.shape(b);
                let gv = View::new(g, rows, cols);
                let bv = View::new(self.value(b), br, bc).maybe_t(tb);
                let av = View::new(self.value(a), ar, ac).maybe_t(ta);
                // d op(a) = g @ op(b)ᵀ ; d op(b) = op(a)ᵀ @ g
                {
                    let da = sink.slot(a);
                    if ta {
                        gemm_into(da, bv, gv.t(), T::one());
                    } else {
                        gemm_into(da, gv, bv.t(), T::one());
                    }
                }
                let db = sink.slot(b);
                if tb {
                    gemm_into(db, gv.t(), av, T::one());
                } else {
                    gemm_into(db, av.t(), gv, T::one());
                }
            }
            &Op::AddBias { x, bias } => {
                sink.add_to(x, g);
                let db = sink.slot(bias);
                for row in g.chunks(cols.max(1)) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            &Op::Add(a, b) => {
                sink.add_to(a, g);
                sink.add_to(b, g);
            }
            &Op::Sub(a, b) => {
                sink.add_to(a, g);
                let db = sink.slot(b);
                for (d, &v) in db.iter_mut().zip(g) {
                    *d -= v;
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let da = sink.slot(a);
                for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(vb) {
                    *d += gv * bv;
                }
                let db = sink.slot(b);
                for ((d, &gv), &av) in db.iter_mut().zip(g).zip(va) {
                    *d += gv * av;
                }
            }
            &Op::Scale(x, s) => {
                let dx = sink.slot(x);
                for (d, &v) in dx.iter_mut().zip(g) {
                    *d += v * s;
                }
            }
            &Op::Sigmoid(x) => {
                let dx = sink.slot(x);
                for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(&node.value) {
                    *d += gv * y * (T::one() - y);
                }
            }
            &Op::Tanh(x) => {
                let dx = sink.slot(x);
                for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(&node.value) {
                    *d += gv * (T::one() - y * y);
                }
            }
            &Op::Relu(x) => {
                let dx = sink.slot(x);
                for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(&node.value) {
                    if y > T::zero() {
                        *d += gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    let dp = sink.slot(p);
                    for r in 0..rows {
                        let src = &g[r * cols + offset..r * cols + offset + pc];
                        for (d, &v) in dp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                    offset += pc;
                }
            }
            Op::Gather { table, idx } => {
                let dt = sink.slot(*table);
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g[r * cols..(r + 1) * cols];
                    for (d, &v) in dt[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            &Op::Broadcast(x) => {
                let dx = sink.slot(x);
                for row in g.chunks(cols.max(1)) {
                    for (d, &v) in dx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            &Op::Softmax(x) => {
                let dx = sink.slot(x);
                for ((gr, yr), dr) in g
                    .chunks(cols)
                    .zip(node.value.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += y * (gv - dot);
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let dx = sink.slot(x);
                for ((gr, yr), dr) in g
                    .chunks(cols)
                    .zip(node.value.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let total: T = gr.iter().copied().sum();
                    for ((d, &gv), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += gv - y.exp() * total;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let gainv = self.value(*gain);
                let n = T::from_usize(cols).unwrap();
                {
                    let dg = sink.slot(*gain);
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, &gv), &h) in dg.iter_mut().zip(gr).zip(hr) {
                            *d += gv * h;
                        }
                    }
                }
                {
                    let ds = sink.slot(*shift);
                    for gr in g.chunks(cols) {
                        for (d, &gv) in ds.iter_mut().zip(gr) {
                            *d += gv;
                        }
                    }
                }
                let dx = sink.slot(*x);
                let mut dxhat = vec![T::zero(); cols];
                for r in 0..rows {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let hr = &xhat[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        dxhat[j] = gr[j] * gainv[j];
                    }
                    let mean_d = dxhat.iter().copied().sum::<T>() / n;
                    let mean_dh = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for j in 0..cols {
                        dx[r * cols + j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
            }
            Op::Unfold { x, spans, window } => {
                let c = self.shape(*x).1;
                let left = (window - 1) / 2;
                let dx = sink.slot(*x);
                for span in spans {
                    for i in span.clone() {
                        for w in 0..*window {
                            let src = i as isize + w as isize - left as isize;
                            if src < span.start as isize || src >= span.end as isize {
                                continue;
                            }
                            let src = src as usize;
                            let base = i * window * c + w * c;
                            for (d, &v) in dx[src * c..(src + 1) * c].iter_mut().zip(&g[base..base + c]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::PiecewiseMax { x, argmax } => {
                let c = self.shape(*x).1;
                let block = cols / 3;
                let dx = sink.slot(*x);
                for (k, (&row, &gv)) in argmax.iter().zip(g).enumerate() {
                    if row != usize::MAX {
                        dx[row * c + k % block] += gv;
                    }
                }
            }
            Op::SegmentSoftmax { x, groups } => {
                let dx = sink.slot(*x);
                for grp in groups {
                    let gr = &g[grp.clone()];
                    let yr = &node.value[grp.clone()];
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &y) in dx[grp.clone()].iter_mut().zip(gr).zip(yr) {
                        *d += y * (gv - dot);
                    }
                }
            }
            Op::SegmentSum { weights, x, groups } => {
                let c = cols;
                let (wv, xv) = (self.value(*weights), self.value(*x));
                {
                    let dw = sink.slot(*weights);
                    for (gi, grp) in groups.iter().enumerate() {
                        let gr = &g[gi * c..(gi + 1) * c];
                        for i in grp.clone() {
                            dw[i] += gr.iter().zip(&xv[i * c..(i + 1) * c]).map(|(&a, &b)| a * b).sum();
                        }
                    }
                }
                let dx = sink.slot(*x);
                for (gi, grp) in groups.iter().enumerate() {
                    let gr = &g[gi * c..(gi + 1) * c];
                    for i in grp.clone() {
                        for (d, &gv) in dx[i * c..(i + 1) * c].iter_mut().zip(gr) {
                            *d += wv[i] * gv;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let dx = sink.slot(*x);
                for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += gv * m;
                }
            }
            Op::Nll { x, targets } => {
                let c = self.shape(*x).1;
                let scale = -g[0] / T::from_usize(targets.len()).unwrap();
                let dx = sink.slot(*x);
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * c + t] += scale;
                }
            }
            &Op::SumSquares(x) => {
                let xv = self.value(x);
                let two = T::lit(2.0) * g[0];
                let dx = sink.slot(x);
                for (d, &v) in dx.iter_mut().zip(xv) {
                    *d += two * v;
                }
            }
        }
    }
}

/// Routes gradient contributions either to an intermediate node buffer or,
/// for parameter leaves, straight into the parameter gradient.
struct Sink<'a, 'p, T: Real> {
    tape: &'a Tape<'p, T>,
    grads: &'a mut [Option<Vec<T>>],
    out: &'a mut Gradients<T>,
}

impl<T: Real> Sink<'_, '_, T> {
    fn slot(&mut self, id: NodeId) -> &mut [T] {
        let node = &self.tape.nodes[id.0];
        let len = node.rows * node.cols;
        match node.op {
            Op::Param(pid) => self.out.slot(pid.0, len),
            _ => self.grads[id.0].get_or_insert_with(|| vec![T::zero(); len]),
        }
    }

    fn add_to(&mut self, id: NodeId, g: &[T]) {
        for (d, &v) in self.slot(id).iter_mut().zip(g) {
            *d += v;
        }
    }
}
