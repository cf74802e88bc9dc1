use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm, Layout};
use super::{DiffError, Tensor};
use crate::math;

/// Below this L2 norm `normalize` returns the zero vector (and zero gradient).
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    #[inline]
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    MatVec,
    MatMul,
    Relu,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Sum,
    Mean,
    RowSum,
    L2Norm,
    Normalize,
    Concat,
    Slice,
    Broadcast,
    Dot,
    GroupSum,
    GroupMean,
    ExclusiveCumsum,
    ReplaceRows,
    Gather,
    Im2col,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    L2Norm(Var),
    Normalize(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Broadcast(Var),
    Dot(Var, Var),
    GroupSum { src: Var, group: usize },
    GroupMean { src: Var, group: usize },
    ExclusiveCumsum { src: Var, group: usize },
    ReplaceRows { src: Var, fill: Var, rows: Vec<usize> },
    Gather { src: Var, taps: Vec<(usize, f64)>, per_row: usize },
    Im2col { src: Var, height: usize, width: usize },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(..) => OpKind::Offset,
            Op::MatVec(..) => OpKind::MatVec,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Relu(..) => OpKind::Relu,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::RowSum(..) => OpKind::RowSum,
            Op::L2Norm(..) => OpKind::L2Norm,
            Op::Normalize(..) => OpKind::Normalize,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Broadcast(..) => OpKind::Broadcast,
            Op::Dot(..) => OpKind::Dot,
            Op::GroupSum { .. } => OpKind::GroupSum,
            Op::GroupMean { .. } => OpKind::GroupMean,
            Op::ExclusiveCumsum { .. } => OpKind::ExclusiveCumsum,
            Op::ReplaceRows { .. } => OpKind::ReplaceRows,
            Op::Gather { .. } => OpKind::Gather,
            Op::Im2col { .. } => OpKind::Im2col,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatVec(a, b) | Op::MatMul(a, b) | Op::Dot(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::L2Norm(a)
            | Op::Normalize(a)
            | Op::Broadcast(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Slice { src, .. }
            | Op::GroupSum { src, .. }
            | Op::GroupMean { src, .. }
            | Op::ExclusiveCumsum { src, .. }
            | Op::Gather { src, .. }
            | Op::Im2col { src, .. } => vec![*src],
            Op::ReplaceRows { src, fill, .. } => vec![*src, *fill],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation, in topological order by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// max(x,0) + ln(1 + e^{-|x|})
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + math::ln_1p(math::exp(-x.abs()))
}

#[inline]
pub fn sigmoid_value(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable or otherwise differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `factor · a`
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// `a + shift`, elementwise.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let v = self.value(a).map(|x| x + shift);
        self.push(Op::Offset(a), v)
    }

    /// `[n,k] · [k,1] → [n,1]`
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var, DiffError> {
        let (tm, tx) = (self.value(m), self.value(x));
        if tx.cols() != 1 || tm.cols() != tx.rows() {
            return Err(DiffError::ShapeMismatch { op: "matvec", left: tm.shape(), right: tx.shape() });
        }
        let (n, k) = tm.shape();
        let mut out = Tensor::zeros(n, 1);
        gemm(n, k, 1, tm.data(), Layout::Plain, tx.data(), Layout::Plain, 0.0, out.data_mut());
        Ok(self.push(Op::MatVec(m, x), out))
    }

    /// `[n,k] · [k,m] → [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(DiffError::ShapeMismatch { op: "matmul", left: ta.shape(), right: tb.shape() });
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(n, m);
        gemm(n, k, m, ta.data(), Layout::Plain, tb.data(), Layout::Plain, 0.0, out.data_mut());
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.data().iter().any(|&x| x <= 0.0) {
            return Err(DiffError::InvalidArgument { op: "log", reason: "non-positive input" });
        }
        let v = t.map(math::ln);
        Ok(self.push(Op::Log(a), v))
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(DiffError::InvalidArgument { op: "mean", reason: "empty input" });
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(Op::Mean(a), v))
    }

    /// Per-row sum, `[n,d] → [n,1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::from_vec(t.rows(), 1, data);
        self.push(Op::RowSum(a), v)
    }

    /// Per-row Euclidean norm, `[n,d] → [n,1]`.
    pub fn l2norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| row_norm(t.row_slice(r))).collect();
        let v = Tensor::from_vec(t.rows(), 1, data);
        self.push(Op::L2Norm(a), v)
    }

    /// Per-row unit normalization; rows with norm ≤ [`NORMALIZE_EPS`] map to zero.
    pub fn normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let n = row_norm(row);
            if n > NORMALIZE_EPS {
                for (o, &x) in out.row_slice_mut(r).iter_mut().zip(row) {
                    *o = x / n;
                }
            }
        }
        self.push(Op::Normalize(a), out)
    }

    /// Column-wise concatenation of equally tall parts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts.first().ok_or(DiffError::InvalidArgument { op: "concat", reason: "no inputs" })?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(DiffError::ShapeMismatch { op: "concat", left: self.value(*first).shape(), right: t.shape() });
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            let t = self.value(*p);
            let w = t.cols();
            for r in 0..rows {
                out.row_slice_mut(r)[c0..c0 + w].copy_from_slice(t.row_slice(r));
            }
            c0 += w;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    /// Columns `start..start+len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(DiffError::IndexOutOfRange { op: "slice", index: start + len, len: t.cols() });
        }
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_slice_mut(r).copy_from_slice(&t.row_slice(r)[start..start + len]);
        }
        Ok(self.push(Op::Slice { src: a, start }, out))
    }

    /// Expand `[1,d]`, `[n,1]` or `[1,1]` to `[rows, cols]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let (r, c) = t.shape();
        if !((r == rows || r == 1) && (c == cols || c == 1)) {
            return Err(DiffError::ShapeMismatch { op: "broadcast", left: t.shape(), right: (rows, cols) });
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let si = if r == 1 { 0 } else { i };
            for j in 0..cols {
                let sj = if c == 1 { 0 } else { j };
                out.set(i, j, t.get(si, sj));
            }
        }
        Ok(self.push(Op::Broadcast(a), out))
    }

    /// Full inner product of two equally shaped tensors, `1×1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same("dot", ta, tb)?;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    fn check_group(&self, op: &'static str, a: Var, group: usize) -> Result<(), DiffError> {
        let t = self.value(a);
        if group == 0 || !t.rows().is_multiple_of(group) {
            return Err(DiffError::InvalidArgument { op, reason: "row count not a multiple of group size" });
        }
        Ok(())
    }

    /// Sum of consecutive row groups, `[n·g, d] → [n, d]`.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var, DiffError> {
        self.check_group("group_sum", a, group)?;
        let v = group_reduce(self.value(a), group, 1.0);
        Ok(self.push(Op::GroupSum { src: a, group }, v))
    }

    /// Mean of consecutive row groups, `[n·g, d] → [n, d]`, summed in row order.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var, DiffError> {
        self.check_group("group_mean", a, group)?;
        let v = group_reduce(self.value(a), group, 1.0 / group as f64);
        Ok(self.push(Op::GroupMean { src: a, group }, v))
    }

    /// Exclusive prefix sum down the rows of each consecutive group.
    pub fn exclusive_cumsum(&mut self, a: Var, group: usize) -> Result<Var, DiffError> {
        self.check_group("exclusive_cumsum", a, group)?;
        let t = self.value(a);
        let d = t.cols();
        let mut out = Tensor::zeros(t.rows(), d);
        for g in 0..t.rows() / group {
            let mut acc = vec![0.0; d];
            for i in 0..group {
                let r = g * group + i;
                out.row_slice_mut(r).copy_from_slice(&acc);
                for (a, x) in acc.iter_mut().zip(t.row_slice(r)) {
                    *a += *x;
                }
            }
        }
        Ok(self.push(Op::ExclusiveCumsum { src: a, group }, out))
    }

    /// Copy of `src` with the listed rows replaced by the `1×d` row `fill`.
    pub fn replace_rows(&mut self, src: Var, fill: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let (ts, tf) = (self.value(src), self.value(fill));
        if tf.rows() != 1 || tf.cols() != ts.cols() {
            return Err(DiffError::ShapeMismatch { op: "replace_rows", left: ts.shape(), right: tf.shape() });
        }
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&last) = sorted.last() {
            if last >= ts.rows() {
                return Err(DiffError::IndexOutOfRange { op: "replace_rows", index: last, len: ts.rows() });
            }
        }
        let mut out = ts.clone();
        for &r in &sorted {
            out.row_slice_mut(r).copy_from_slice(tf.data());
        }
        Ok(self.push(Op::ReplaceRows { src, fill, rows: sorted }, out))
    }

    /// Weighted row gather: output row `o` is `Σ_k w·src[row]` over the
    /// `per_row` taps `taps[o·per_row .. (o+1)·per_row]`.
    pub fn gather(&mut self, src: Var, taps: Vec<(usize, f64)>, per_row: usize) -> Result<Var, DiffError> {
        let t = self.value(src);
        if per_row == 0 || !taps.len().is_multiple_of(per_row) {
            return Err(DiffError::InvalidArgument { op: "gather", reason: "tap count not a multiple of per_row" });
        }
        if let Some(&(bad, _)) = taps.iter().find(|(r, _)| *r >= t.rows()) {
            return Err(DiffError::IndexOutOfRange { op: "gather", index: bad, len: t.rows() });
        }
        let n = taps.len() / per_row;
        let d = t.cols();
        let mut out = Tensor::zeros(n, d);
        for o in 0..n {
            let dst = out.row_slice_mut(o);
            for &(r, w) in &taps[o * per_row..(o + 1) * per_row] {
                if w != 0.0 {
                    for (y, x) in dst.iter_mut().zip(t.row_slice(r)) {
                        *y += w * x;
                    }
                }
            }
        }
        Ok(self.push(Op::Gather { src, taps, per_row }, out))
    }

    /// 3×3 zero-padded patch extraction over a stack of `H·W × C` images
    /// (rows = n·H·W): output row `b·H·W + y·W + x` holds the nine
    /// neighbours within image `b` (row-major kernel order), each a block of
    /// `C` channels.
    pub fn im2col3x3(&mut self, src: Var, height: usize, width: usize) -> Result<Var, DiffError> {
        let t = self.value(src);
        let plane = height * width;
        if plane == 0 || t.rows() == 0 || !t.rows().is_multiple_of(plane) {
            return Err(DiffError::InvalidArgument { op: "im2col", reason: "rows must be a multiple of height·width" });
        }
        let c = t.cols();
        let mut out = Tensor::zeros(t.rows(), 9 * c);
        for base in (0..t.rows()).step_by(plane) {
            for y in 0..height {
                for x in 0..width {
                    let dst = out.row_slice_mut(base + y * width + x);
                    for (k, (dy, dx)) in KERNEL_OFFSETS.iter().enumerate() {
                        let (sy, sx) = (y as isize + dy, x as isize + dx);
                        if sy < 0 || sx < 0 || sy >= height as isize || sx >= width as isize {
                            continue;
                        }
                        let sr = base + sy as usize * width + sx as usize;
                        dst[k * c..(k + 1) * c].copy_from_slice(t.row_slice(sr));
                    }
                }
            }
        }
        Ok(self.push(Op::Im2col { src, height, width }, out))
    }

    /// Reverse-mode sweep from a `1×1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(DiffError::NonScalarRoot { shape: rv.shape() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |gg, x| gg * x));
                }
                if needs(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a), |gg, x| gg * x));
                }
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.map(|x| x * f)),
            Op::Offset(a) => accumulate(grads, *a, g.clone()),
            Op::MatVec(a, b) | Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    let mut da = Tensor::zeros(n, k);
                    gemm(n, m, k, g.data(), Layout::Plain, tb.data(), Layout::Transposed, 0.0, da.data_mut());
                    accumulate(grads, *a, da);
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(k, m);
                    gemm(k, n, m, ta.data(), Layout::Transposed, g.data(), Layout::Plain, 0.0, db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::Relu(a) => {
                accumulate(grads, *a, zip_map(g, self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }))
            }
            Op::Softplus(a) => accumulate(grads, *a, zip_map(g, self.value(*a), |gg, x| gg * sigmoid(x))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, y, |gg, s| gg * s * (1.0 - s))),
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, y, |gg, e| gg * e)),
            Op::Log(a) => accumulate(grads, *a, zip_map(g, self.value(*a), |gg, x| gg / x)),
            Op::Sum(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.item()));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.item() / t.len() as f64));
            }
            Op::RowSum(a) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let gr = g.get(r, 0);
                    d.row_slice_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                accumulate(grads, *a, d);
            }
            Op::L2Norm(a) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let n = y.get(r, 0);
                    if n > 0.0 {
                        let s = g.get(r, 0) / n;
                        for (o, x) in d.row_slice_mut(r).iter_mut().zip(t.row_slice(r)) {
                            *o = s * x;
                        }
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Normalize(a) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let n = row_norm(t.row_slice(r));
                    if n > NORMALIZE_EPS {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let proj: f64 = yr.iter().zip(gr).map(|(u, v)| u * v).sum();
                        for ((o, gv), yv) in d.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = (gv - yv * proj) / n;
                        }
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(*p) {
                        let mut d = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[c0..c0 + w]);
                        }
                        accumulate(grads, *p, d);
                    }
                    c0 += w;
                }
            }
            Op::Slice { src, start } => {
                let t = self.value(*src);
                let w = g.cols();
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    d.row_slice_mut(r)[*start..*start + w].copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *src, d);
            }
            Op::Broadcast(a) => {
                let t = self.value(*a);
                let (r, c) = t.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..g.rows() {
                    let si = if r == 1 { 0 } else { i };
                    for j in 0..g.cols() {
                        let sj = if c == 1 { 0 } else { j };
                        let cur = d.get(si, sj);
                        d.set(si, sj, cur + g.get(i, j));
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Dot(a, b) => {
                let s = g.item();
                if needs(*a) {
                    accumulate(grads, *a, self.value(*b).map(|x| x * s));
                }
                if needs(*b) {
                    accumulate(grads, *b, self.value(*a).map(|x| x * s));
                }
            }
            Op::GroupSum { src, group } | Op::GroupMean { src, group } => {
                let scale = if matches!(node.op, Op::GroupMean { .. }) { 1.0 / *group as f64 } else { 1.0 };
                let t = self.value(*src);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for (o, gv) in d.row_slice_mut(r).iter_mut().zip(g.row_slice(r / group)) {
                        *o = gv * scale;
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::ExclusiveCumsum { src, group } => {
                let t = self.value(*src);
                let dcols = t.cols();
                let mut d = Tensor::zeros(t.rows(), dcols);
                for gi in 0..t.rows() / group {
                    let mut acc = vec![0.0; dcols];
                    for i in (0..*group).rev() {
                        let r = gi * group + i;
                        d.row_slice_mut(r).copy_from_slice(&acc);
                        for (a, x) in acc.iter_mut().zip(g.row_slice(r)) {
                            *a += *x;
                        }
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::ReplaceRows { src, fill, rows } => {
                if needs(*src) {
                    let mut d = g.clone();
                    for &r in rows {
                        d.row_slice_mut(r).iter_mut().for_each(|x| *x = 0.0);
                    }
                    accumulate(grads, *src, d);
                }
                if needs(*fill) {
                    let mut d = Tensor::zeros(1, g.cols());
                    for &r in rows {
                        for (o, x) in d.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += *x;
                        }
                    }
                    accumulate(grads, *fill, d);
                }
            }
            Op::Gather { src, taps, per_row } => {
                let t = self.value(*src);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for o in 0..g.rows() {
                    let gr = g.row_slice(o);
                    for &(r, w) in &taps[o * per_row..(o + 1) * per_row] {
                        if w != 0.0 {
                            for (x, gv) in d.row_slice_mut(r).iter_mut().zip(gr) {
                                *x += w * gv;
                            }
                        }
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::Im2col { src, height, width } => {
                let t = self.value(*src);
                let c = t.cols();
                let plane = height * width;
                let mut d = Tensor::zeros(t.rows(), c);
                for base in (0..t.rows()).step_by(plane) {
                    for yy in 0..*height {
                        for xx in 0..*width {
                            let gr = g.row_slice(base + yy * width + xx);
                            for (k, (dy, dx)) in KERNEL_OFFSETS.iter().enumerate() {
                                let (sy, sx) = (yy as isize + dy, xx as isize + dx);
                                if sy < 0 || sx < 0 || sy >= *height as isize || sx >= *width as isize {
                                    continue;
                                }
                                let sr = base + sy as usize * width + sx as usize;
                                for (o, gv) in d.row_slice_mut(sr).iter_mut().zip(&gr[k * c..(k + 1) * c]) {
                                    *o += *gv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *src, d);
            }
        }
    }
}

const KERNEL_OFFSETS: [(isize, isize); 9] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

fn row_norm(row: &[f64]) -> f64 {
    math::sqrt(row.iter().map(|x| x * x).sum())
}

fn group_reduce(t: &Tensor, group: usize, scale: f64) -> Tensor {
    let n = t.rows() / group;
    let mut out = Tensor::zeros(n, t.cols());
    for g in 0..n {
        let dst = out.row_slice_mut(g);
        for i in 0..group {
            for (o, x) in dst.iter_mut().zip(t.row_slice(g * group + i)) {
                *o += *x;
            }
        }
        if scale != 1.0 {
            dst.iter_mut().for_each(|x| *x *= scale);
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
