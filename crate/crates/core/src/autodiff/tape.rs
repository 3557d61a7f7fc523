//! Define-by-run reverse-mode differentiation.
//!
//! Every forward operation on a tracked input appends one node to the tape.
//! Nodes are stored in recording order, so inputs always precede the nodes
//! that consume them, and `backward` walks the tape once in reverse.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::tensor::{NodeId, SparseMatrix, Tensor};
use crate::error::{CoevoError, Result};

/// Guard for divisions by a vector norm and for logarithms.
pub const EPSILON: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    External,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    LeakyRelu,
    Sigmoid,
    Log,
    Square,
    ConcatRows,
    ConcatCols,
    SoftmaxRows,
    L2NormalizeRows,
    Sum,
    RowDot,
    GatherRows,
    Spmm,
    ScaleRows,
    SegmentSum,
    SegmentSoftmax,
    MaxElementwise,
    Column,
}

/// Elementwise operations addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Log,
    Square,
}

enum Op {
    Leaf,
    External(NodeId),
    MatMul(Tensor, Tensor),
    Transpose,
    Add,
    Sub,
    Mul(Tensor, Tensor),
    Scale(f64),
    Relu(Tensor),
    LeakyRelu(Tensor, f64),
    Sigmoid,
    Log(Tensor),
    Square(Tensor),
    ConcatRows,
    ConcatCols,
    SoftmaxRows,
    L2NormalizeRows(Tensor),
    Sum,
    RowDot(Tensor, Tensor),
    GatherRows(Arc<[usize]>),
    Spmm(Arc<SparseMatrix>),
    ScaleRows(Tensor, Tensor),
    SegmentSum(Arc<[usize]>),
    SegmentSoftmax(Arc<[usize]>),
    MaxElementwise(Vec<u32>),
    Column(usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::External(_) => OpKind::External,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose => OpKind::Transpose,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Log(_) => OpKind::Log,
            Op::Square(_) => OpKind::Square,
            Op::ConcatRows => OpKind::ConcatRows,
            Op::ConcatCols => OpKind::ConcatCols,
            Op::SoftmaxRows => OpKind::SoftmaxRows,
            Op::L2NormalizeRows(_) => OpKind::L2NormalizeRows,
            Op::Sum => OpKind::Sum,
            Op::RowDot(..) => OpKind::RowDot,
            Op::GatherRows(_) => OpKind::GatherRows,
            Op::Spmm(_) => OpKind::Spmm,
            Op::ScaleRows(..) => OpKind::ScaleRows,
            Op::SegmentSum(_) => OpKind::SegmentSum,
            Op::SegmentSoftmax(_) => OpKind::SegmentSoftmax,
            Op::MaxElementwise(_) => OpKind::MaxElementwise,
            Op::Column(_) => OpKind::Column,
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<Option<NodeId>>,
    input_shapes: Vec<[usize; 2]>,
    out: Tensor,
}

/// Recording of forward operations for one loss evaluation.
pub struct Tape {
    id: u32,
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<OpKind>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients {
    tape: u32,
    leaves: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `t`, or `None` when `t` is untracked or was not reached.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node?;
        if id.tape != self.tape {
            return None;
        }
        self.leaves.get(id.index as usize)?.as_deref()
    }

    /// Gradient for `t`; unreached tensors get zeros.
    pub fn wrt(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()])
    }
}

/// Node-id translation produced by [`Tape::absorb`].
pub struct Remap {
    from: u32,
    map: Vec<NodeId>,
}

impl Remap {
    pub fn apply(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        if let Some(id) = t.node {
            assert_eq!(id.tape, self.from, "tensor does not belong to the absorbed tape");
            out.node = Some(self.map[id.index as usize]);
        }
        out
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: Option<NodeId>, len: usize, f: impl FnOnce(&mut [f64])) {
    if let Some(id) = id {
        let slot = grads[id.index as usize].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
        *o += yi * (gi - dot);
    }
}

fn check_offsets(offsets: &[usize], rows: usize, op: &'static str) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(CoevoError::Contract(format!(
            "{op}: segment offsets do not partition {rows} rows"
        )))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scales every backward contribution of `kind` by 1.1. Verification
    /// tooling uses this as a negative control for gradient checks.
    pub fn inject_fault(&self, kind: Option<OpKind>) {
        self.fault.set(kind);
    }

    fn push(&self, op: Op, inputs: Vec<Option<NodeId>>, input_shapes: Vec<[usize; 2]>, out: Tensor) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId {
            tape: self.id,
            index: nodes.len() as u32,
        };
        nodes.push(Node {
            op,
            inputs,
            input_shapes,
            out: out.detached(),
        });
        let mut tracked = out;
        tracked.node = Some(id);
        tracked
    }

    fn record(&self, op: Op, inputs: &[&Tensor], out: Tensor) -> Tensor {
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|t| t.node).collect();
        if ids.iter().all(Option::is_none) {
            return out;
        }
        for id in ids.iter().flatten() {
            assert_eq!(id.tape, self.id, "tensor recorded on a different tape");
        }
        let shapes = inputs.iter().map(|t| t.shape()).collect();
        self.push(op, ids, shapes, out)
    }

    /// Tracked leaf holding the values of `t`.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        self.push(Op::Leaf, Vec::new(), Vec::new(), t.detached())
    }

    /// Makes a tensor tracked on another tape usable on this one.
    /// [`absorb`](Self::absorb) later resolves the reference.
    pub fn import(&self, t: &Tensor) -> Tensor {
        match t.node {
            None => t.clone(),
            Some(id) => self.push(Op::External(id), Vec::new(), Vec::new(), t.detached()),
        }
    }

    /// Appends every node recorded on `sub` to this tape, in order.
    pub fn absorb(&self, sub: Tape) -> Remap {
        let from = sub.id;
        let sub_nodes = sub.nodes.into_inner();
        let mut map = Vec::with_capacity(sub_nodes.len());
        let mut nodes = self.nodes.borrow_mut();
        for node in sub_nodes {
            if let Op::External(target) = node.op {
                assert_eq!(target.tape, self.id, "external reference to a third tape");
                map.push(target);
                continue;
            }
            let inputs = node
                .inputs
                .iter()
                .map(|i| i.map(|id| map[id.index as usize]))
                .collect();
            let id = NodeId {
                tape: self.id,
                index: nodes.len() as u32,
            };
            nodes.push(Node { inputs, ..node });
            map.push(id);
        }
        Remap { from, map }
    }

    // ---- forward operations -------------------------------------------------

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [m, k] = a.shape();
        let [k2, n] = b.shape();
        if k != k2 {
            return Err(CoevoError::shape("matmul", a.shape(), b.shape()));
        }
        let out = Tensor::from_parts(m, n, matmul_kernel(a.values(), b.values(), m, k, n).into());
        Ok(self.record(Op::MatMul(a.detached(), b.detached()), &[a, b], out))
    }

    pub fn transpose(&self, a: &Tensor) -> Tensor {
        let [m, n] = a.shape();
        let v = a.values();
        let out = Tensor::from_fn(n, m, |i, j| v[j * n + i]);
        self.record(Op::Transpose, &[a], out)
    }

    fn binary(&self, name: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(CoevoError::shape(name, a.shape(), b.shape()));
        }
        let v: Vec<f64> = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(a.rows(), a.cols(), v.into()))
    }

    fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        let v: Vec<f64> = a.values().iter().map(|&x| f(x)).collect();
        Tensor::from_parts(a.rows(), a.cols(), v.into())
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.record(Op::Add, &[a, b], out))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.record(Op::Sub, &[a, b], out))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.record(Op::Mul(a.detached(), b.detached()), &[a, b], out))
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        self.record(Op::Scale(c), &[a], Self::unary(a, |x| c * x))
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        self.record(Op::Relu(a.detached()), &[a], Self::unary(a, |x| x.max(0.0)))
    }

    pub fn leaky_relu(&self, a: &Tensor, slope: f64) -> Tensor {
        let out = Self::unary(a, |x| if x > 0.0 { x } else { slope * x });
        self.record(Op::LeakyRelu(a.detached(), slope), &[a], out)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.record(Op::Sigmoid, &[a], Self::unary(a, sigmoid))
    }

    /// Natural log with the argument clamped at [`EPSILON`].
    pub fn log(&self, a: &Tensor) -> Tensor {
        self.record(Op::Log(a.detached()), &[a], Self::unary(a, |x| x.max(EPSILON).ln()))
    }

    pub fn square(&self, a: &Tensor) -> Tensor {
        self.record(Op::Square(a.detached()), &[a], Self::unary(a, |x| x * x))
    }

    pub fn elementwise(&self, op: Elementwise, args: &[&Tensor]) -> Result<Tensor> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(CoevoError::Contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Relu => Ok(self.relu(args[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Log => Ok(self.log(args[0])),
            Elementwise::Square => Ok(self.square(args[0])),
        }
    }

    /// Stacks two column vectors.
    pub fn concat(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if !a.is_column() || !b.is_column() {
            return Err(CoevoError::shape("concat", a.shape(), b.shape()));
        }
        self.concat_rows(&[a, b])
    }

    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut v = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(CoevoError::shape("concat_rows", parts[0].shape(), p.shape()));
            }
            v.extend_from_slice(p.values());
            rows += p.rows();
        }
        let out = Tensor::from_parts(rows, cols, v.into());
        Ok(self.record(Op::ConcatRows, parts, out))
    }

    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows());
        if let Some(p) = parts.iter().find(|p| p.rows() != rows) {
            return Err(CoevoError::shape("concat_cols", parts[0].shape(), p.shape()));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut v = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                v.extend_from_slice(p.row(i));
            }
        }
        let out = Tensor::from_parts(rows, cols, v.into());
        Ok(self.record(Op::ConcatCols, parts, out))
    }

    /// Softmax over each row, shifted by the row maximum.
    pub fn softmax_rows(&self, a: &Tensor) -> Result<Tensor> {
        if a.cols() == 0 {
            return Err(CoevoError::shape("softmax", a.shape(), [a.rows(), 1]));
        }
        let mut v = a.values().to_vec();
        for row in v.chunks_mut(a.cols()) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts(a.rows(), a.cols(), v.into());
        Ok(self.record(Op::SoftmaxRows, &[a], out))
    }

    /// Softmax of a `k x 1` column.
    pub fn softmax_vec(&self, e: &Tensor) -> Result<Tensor> {
        if !e.is_column() || e.rows() == 0 {
            return Err(CoevoError::shape("softmax_vec", e.shape(), [e.rows().max(1), 1]));
        }
        let row = self.transpose(e);
        let s = self.softmax_rows(&row)?;
        Ok(self.transpose(&s))
    }

    /// Divides each row by `max(norm, EPSILON)`.
    pub fn l2_normalize_rows(&self, a: &Tensor) -> Tensor {
        let mut v = a.values().to_vec();
        if a.cols() > 0 {
            for row in v.chunks_mut(a.cols()) {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPSILON);
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
        let out = Tensor::from_parts(a.rows(), a.cols(), v.into());
        self.record(Op::L2NormalizeRows(a.detached()), &[a], out)
    }

    pub fn l2_normalize(&self, h: &Tensor) -> Result<Tensor> {
        if !h.is_column() {
            return Err(CoevoError::shape("l2_normalize", h.shape(), [h.rows(), 1]));
        }
        let row = self.transpose(h);
        let n = self.l2_normalize_rows(&row);
        Ok(self.transpose(&n))
    }

    pub fn sum(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.values().iter().sum();
        self.record(Op::Sum, &[a], Tensor::scalar(total))
    }

    /// Row-wise inner products: `out[i] = a[i, :] . b[i, :]`.
    pub fn row_dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(CoevoError::shape("row_dot", a.shape(), b.shape()));
        }
        let v: Vec<f64> = (0..a.rows())
            .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        let out = Tensor::from_parts(a.rows(), 1, v.into());
        Ok(self.record(Op::RowDot(a.detached(), b.detached()), &[a, b], out))
    }

    pub fn gather_rows(&self, a: &Tensor, index: impl Into<Arc<[usize]>>) -> Result<Tensor> {
        let index: Arc<[usize]> = index.into();
        if let Some(&bad) = index.iter().find(|&&i| i >= a.rows()) {
            return Err(CoevoError::Contract(format!(
                "gather_rows: index {bad} out of range for {} rows",
                a.rows()
            )));
        }
        let out = a.select_rows(&index);
        Ok(self.record(Op::GatherRows(index), &[a], out))
    }

    /// Constant sparse matrix times dense tensor.
    pub fn spmm(&self, s: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        if s.cols != x.rows() {
            return Err(CoevoError::shape("spmm", [s.rows, s.cols], x.shape()));
        }
        let k = x.cols();
        let mut v = vec![0.0; s.rows * k];
        for i in 0..s.rows {
            let out = &mut v[i * k..(i + 1) * k];
            for (j, w) in s.row_entries(i) {
                for (o, &xv) in out.iter_mut().zip(x.row(j)) {
                    *o += w * xv;
                }
            }
        }
        let out = Tensor::from_parts(s.rows, k, v.into());
        Ok(self.record(Op::Spmm(Arc::clone(s)), &[x], out))
    }

    /// Multiplies row `i` of `x` by `w[i]`.
    pub fn scale_rows(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        if !w.is_column() || w.rows() != x.rows() {
            return Err(CoevoError::shape("scale_rows", x.shape(), w.shape()));
        }
        let k = x.cols();
        let mut v = x.values().to_vec();
        for (i, row) in v.chunks_mut(k.max(1)).enumerate().take(x.rows()) {
            let wi = w.values()[i];
            for e in row.iter_mut() {
                *e *= wi;
            }
        }
        let out = Tensor::from_parts(x.rows(), k, v.into());
        Ok(self.record(Op::ScaleRows(x.detached(), w.detached()), &[x, w], out))
    }

    /// Sums consecutive row groups delimited by `offsets`.
    pub fn segment_sum(&self, x: &Tensor, offsets: impl Into<Arc<[usize]>>) -> Result<Tensor> {
        let offsets: Arc<[usize]> = offsets.into();
        check_offsets(&offsets, x.rows(), "segment_sum")?;
        let segs = offsets.len() - 1;
        let k = x.cols();
        let mut v = vec![0.0; segs * k];
        for s in 0..segs {
            let out = &mut v[s * k..(s + 1) * k];
            for e in offsets[s]..offsets[s + 1] {
                for (o, &xv) in out.iter_mut().zip(x.row(e)) {
                    *o += xv;
                }
            }
        }
        let out = Tensor::from_parts(segs, k, v.into());
        Ok(self.record(Op::SegmentSum(offsets), &[x], out))
    }

    /// Softmax of a column within each segment delimited by `offsets`.
    pub fn segment_softmax(&self, e: &Tensor, offsets: impl Into<Arc<[usize]>>) -> Result<Tensor> {
        let offsets: Arc<[usize]> = offsets.into();
        if !e.is_column() {
            return Err(CoevoError::shape("segment_softmax", e.shape(), [e.rows(), 1]));
        }
        check_offsets(&offsets, e.rows(), "segment_softmax")?;
        let mut v = e.values().to_vec();
        for w in offsets.windows(2) {
            if w[1] > w[0] {
                softmax_in_place(&mut v[w[0]..w[1]]);
            }
        }
        let out = Tensor::from_parts(e.rows(), 1, v.into());
        Ok(self.record(Op::SegmentSoftmax(offsets), &[e], out))
    }

    /// Elementwise maximum across equally shaped tensors; ties go to the earliest.
    pub fn max_elementwise(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| CoevoError::Contract("max_elementwise of nothing".into()))?;
        if let Some(p) = parts.iter().find(|p| p.shape() != first.shape()) {
            return Err(CoevoError::shape("max_elementwise", first.shape(), p.shape()));
        }
        let mut v = first.values().to_vec();
        let mut argmax = vec![0u32; v.len()];
        for (pi, p) in parts.iter().enumerate().skip(1) {
            for (j, &x) in p.values().iter().enumerate() {
                if x > v[j] {
                    v[j] = x;
                    argmax[j] = pi as u32;
                }
            }
        }
        let out = Tensor::from_parts(first.rows(), first.cols(), v.into());
        Ok(self.record(Op::MaxElementwise(argmax), parts, out))
    }

    /// Column `j` of `a` as an `m x 1` tensor.
    pub fn column(&self, a: &Tensor, j: usize) -> Result<Tensor> {
        if j >= a.cols() {
            return Err(CoevoError::Contract(format!(
                "column {j} out of range for {:?}",
                a.shape()
            )));
        }
        let v: Vec<f64> = (0..a.rows()).map(|i| a.get(i, j)).collect();
        let out = Tensor::from_parts(a.rows(), 1, v.into());
        Ok(self.record(Op::Column(j), &[a], out))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.shape() != [1, 1] {
            return Err(CoevoError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let id = loss
            .node
            .filter(|id| id.tape == self.id)
            .ok_or_else(|| CoevoError::Contract("loss is not recorded on this tape".into()))?;
        let nodes = self.nodes.borrow();
        let last = id.index as usize;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(last + 1);
        grads.resize_with(last + 1, || None);
        grads[last] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Vec<f64>>> = Vec::with_capacity(last + 1);
        leaves.resize_with(last + 1, || None);
        let fault = self.fault.get();

        for i in (0..=last).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &nodes[i];
            if fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|x| *x *= 1.1);
            }
            match node.op {
                Op::Leaf | Op::External(_) => leaves[i] = Some(g),
                _ => propagate(node, &g, &mut grads),
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }
}

fn propagate(node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let ins = &node.inputs;
    let shp = &node.input_shapes;
    let len = |i: usize| shp[i][0] * shp[i][1];
    let y = node.out.values();
    match &node.op {
        Op::Leaf | Op::External(_) => {}
        Op::MatMul(a, b) => {
            let [m, k] = a.shape();
            let n = b.cols();
            let (av, bv) = (a.values(), b.values());
            acc(grads, ins[0], m * k, |ga| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            acc(grads, ins[1], k * n, |gb| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += aip * gv;
                        }
                    }
                }
            });
        }
        Op::Transpose => {
            let [m, n] = shp[0];
            acc(grads, ins[0], m * n, |ga| {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::Add => {
            for k in 0..2 {
                acc(grads, ins[k], len(k), |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
        }
        Op::Sub => {
            acc(grads, ins[0], len(0), |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            acc(grads, ins[1], len(1), |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
        }
        Op::Mul(a, b) => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), bv) in ga.iter_mut().zip(g).zip(b.values()) {
                    *o += x * bv;
                }
            });
            acc(grads, ins[1], len(1), |gb| {
                for ((o, x), av) in gb.iter_mut().zip(g).zip(a.values()) {
                    *o += x * av;
                }
            });
        }
        Op::Scale(c) => {
            acc(grads, ins[0], len(0), |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x));
        }
        Op::Relu(a) => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), av) in ga.iter_mut().zip(g).zip(a.values()) {
                    if *av > 0.0 {
                        *o += x;
                    }
                }
            });
        }
        Op::LeakyRelu(a, slope) => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), av) in ga.iter_mut().zip(g).zip(a.values()) {
                    *o += if *av > 0.0 { *x } else { slope * x };
                }
            });
        }
        Op::Sigmoid => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), yv) in ga.iter_mut().zip(g).zip(y) {
                    *o += x * yv * (1.0 - yv);
                }
            });
        }
        Op::Log(a) => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), av) in ga.iter_mut().zip(g).zip(a.values()) {
                    if *av > EPSILON {
                        *o += x / av;
                    }
                }
            });
        }
        Op::Square(a) => {
            acc(grads, ins[0], len(0), |ga| {
                for ((o, x), av) in ga.iter_mut().zip(g).zip(a.values()) {
                    *o += 2.0 * av * x;
                }
            });
        }
        Op::ConcatRows => {
            let mut offset = 0;
            for (k, s) in shp.iter().enumerate() {
                let n = s[0] * s[1];
                let part = &g[offset..offset + n];
                acc(grads, ins[k], n, |ga| ga.iter_mut().zip(part).for_each(|(o, x)| *o += x));
                offset += n;
            }
        }
        Op::ConcatCols => {
            let total: usize = shp.iter().map(|s| s[1]).sum();
            let mut col0 = 0;
            for (k, s) in shp.iter().enumerate() {
                let [rows, cols] = *s;
                acc(grads, ins[k], rows * cols, |ga| {
                    for i in 0..rows {
                        let src = &g[i * total + col0..i * total + col0 + cols];
                        for (o, x) in ga[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                });
                col0 += cols;
            }
        }
        Op::SoftmaxRows => {
            let cols = shp[0][1];
            acc(grads, ins[0], len(0), |ga| {
                for ((gr, yr), outr) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    softmax_backward(yr, gr, outr);
                }
            });
        }
        Op::L2NormalizeRows(a) => {
            let cols = shp[0][1].max(1);
            acc(grads, ins[0], len(0), |ga| {
                for ((xr, (yr, gr)), outr) in a
                    .values()
                    .chunks(cols)
                    .zip(y.chunks(cols).zip(g.chunks(cols)))
                    .zip(ga.chunks_mut(cols))
                {
                    let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > EPSILON {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in outr.iter_mut().zip(gr).zip(yr) {
                            *o += (gi - yi * dot) / norm;
                        }
                    } else {
                        for (o, &gi) in outr.iter_mut().zip(gr) {
                            *o += gi / EPSILON;
                        }
                    }
                }
            });
        }
        Op::Sum => {
            acc(grads, ins[0], len(0), |ga| ga.iter_mut().for_each(|o| *o += g[0]));
        }
        Op::RowDot(a, b) => {
            let cols = a.cols();
            acc(grads, ins[0], len(0), |ga| {
                for (i, &gi) in g.iter().enumerate() {
                    for (o, bv) in ga[i * cols..(i + 1) * cols].iter_mut().zip(b.row(i)) {
                        *o += gi * bv;
                    }
                }
            });
            acc(grads, ins[1], len(1), |gb| {
                for (i, &gi) in g.iter().enumerate() {
                    for (o, av) in gb[i * cols..(i + 1) * cols].iter_mut().zip(a.row(i)) {
                        *o += gi * av;
                    }
                }
            });
        }
        Op::GatherRows(index) => {
            let cols = shp[0][1];
            acc(grads, ins[0], len(0), |ga| {
                for (r, &src) in index.iter().enumerate() {
                    for (o, x) in ga[src * cols..(src + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *o += x;
                    }
                }
            });
        }
        Op::Spmm(s) => {
            let k = shp[0][1];
            acc(grads, ins[0], len(0), |gx| {
                for i in 0..s.rows {
                    let gr = &g[i * k..(i + 1) * k];
                    for (j, w) in s.row_entries(i) {
                        for (o, x) in gx[j * k..(j + 1) * k].iter_mut().zip(gr) {
                            *o += w * x;
                        }
                    }
                }
            });
        }
        Op::ScaleRows(x, w) => {
            let k = x.cols();
            acc(grads, ins[0], len(0), |gx| {
                for i in 0..x.rows() {
                    let wi = w.values()[i];
                    for (o, gv) in gx[i * k..(i + 1) * k].iter_mut().zip(&g[i * k..(i + 1) * k]) {
                        *o += wi * gv;
                    }
                }
            });
            acc(grads, ins[1], len(1), |gw| {
                for i in 0..x.rows() {
                    gw[i] += g[i * k..(i + 1) * k].iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>();
                }
            });
        }
        Op::SegmentSum(offsets) => {
            let k = shp[0][1];
            acc(grads, ins[0], len(0), |gx| {
                for s in 0..offsets.len() - 1 {
                    let gr = &g[s * k..(s + 1) * k];
                    for e in offsets[s]..offsets[s + 1] {
                        for (o, x) in gx[e * k..(e + 1) * k].iter_mut().zip(gr) {
                            *o += x;
                        }
                    }
                }
            });
        }
        Op::SegmentSoftmax(offsets) => {
            acc(grads, ins[0], len(0), |ge| {
                for w in offsets.windows(2) {
                    let r = w[0]..w[1];
                    softmax_backward(&y[r.clone()], &g[r.clone()], &mut ge[r]);
                }
            });
        }
        Op::MaxElementwise(argmax) => {
            for k in 0..ins.len() {
                acc(grads, ins[k], len(k), |ga| {
                    for (j, &am) in argmax.iter().enumerate() {
                        if am as usize == k {
                            ga[j] += g[j];
                        }
                    }
                });
            }
        }
        Op::Column(j) => {
            let cols = shp[0][1];
            acc(grads, ins[0], len(0), |ga| {
                for (i, x) in g.iter().enumerate() {
                    ga[i * cols + j] += x;
                }
            });
        }
    }
}
