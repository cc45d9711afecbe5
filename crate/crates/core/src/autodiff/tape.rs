//! The tape: tensors, ops, and the reverse sweep.

use std::rc::Rc;

use ndarray::{Array2, Axis};
use thiserror::Error;

/// Element type of tape tensors. `f32` for training, `f64` for the
/// reference mode used by gradient checks.
pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + PartialOrd
    + std::ops::AddAssign
    + std::ops::Neg<Output = Self>
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn maximum(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
        }
    };
}
impl_scalar!(f32);
impl_scalar!(f64);

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {a:?} vs {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalarLoss((usize, usize)),
}

/// Handle to a tensor on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Recorded sequence of pairwise edge merges plus the final row compaction.
/// Shared by the pooling op (forward direction) and the unpooling op
/// (reverse direction); both are linear maps and exact adjoints of each
/// other.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMergePlan {
    pub rows_before: usize,
    /// Per collapse, in execution order: `[p, b, q, d, e]`. Rows `p` and `q`
    /// survive as the two merge-group averages, rows `b`, `d` and the centre
    /// row `e` die.
    pub steps: Vec<[u32; 5]>,
    /// Surviving pre-merge row ids, ascending; compacted output row `i`
    /// comes from `alive[i]`.
    pub alive: Vec<u32>,
}

impl RowMergePlan {
    pub fn rows_after(&self) -> usize {
        self.alive.len()
    }

    /// Structural sanity: ids in range, each row killed at most once, a
    /// killed row never referenced again, alive = complement of killed.
    pub fn validate(&self) -> Result<(), TensorError> {
        let n = self.rows_before;
        let fail = |msg: String| {
            Err(TensorError::Invalid {
                op: "row_merge_plan",
                msg,
            })
        };
        let mut dead = vec![false; n];
        for (i, s) in self.steps.iter().enumerate() {
            let [p, b, q, d, e] = *s;
            let ids = [p, b, q, d, e];
            let mut sorted = ids;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return fail(format!("step {i} repeats a row id"));
            }
            for &x in &ids {
                if x as usize >= n {
                    return fail(format!("step {i} row {x} out of range"));
                }
                if dead[x as usize] {
                    return fail(format!("step {i} references dead row {x}"));
                }
            }
            for &x in &[b, d, e] {
                dead[x as usize] = true;
            }
        }
        let expect: Vec<u32> = (0..n as u32).filter(|&r| !dead[r as usize]).collect();
        if expect != self.alive {
            return fail("alive list disagrees with steps".into());
        }
        Ok(())
    }
}

enum Op<S: Scalar> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Abs(usize),
    Relu(usize),
    BiasAdd(usize, usize),
    GatherRows {
        x: usize,
        idx: Rc<Vec<u32>>,
    },
    ScatterMean {
        x: usize,
        groups: Rc<Vec<u32>>,
        counts: Vec<u32>,
    },
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Rc<Vec<u32>>,
        probs: Array2<S>,
    },
    PoolRows {
        x: usize,
        plan: Rc<RowMergePlan>,
    },
    UnpoolRows {
        x: usize,
        plan: Rc<RowMergePlan>,
    },
}

struct Node<S: Scalar> {
    value: Array2<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Variance floor inside group normalisation.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// The recording tape. All shapes are explicit 2-d; the only broadcast in
/// the engine is [`Tape::bias_add`].
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if the node
    /// participates and requires gradients.
    pub fn grad(&self, id: NodeId) -> Option<&Array2<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_finite(&self, op: &'static str, id: NodeId) -> Result<NodeId, TensorError> {
        if self.nodes[id.0].value.iter().all(|v| v.is_finite()) {
            Ok(id)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Enters a tensor onto the tape. `needs_grad` marks trainable leaves;
    /// plain data should pass `false` so the reverse sweep can skip it.
    pub fn leaf(&mut self, value: Array2<S>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.ncols() != vb.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                a: va.dim(),
                b: vb.dim(),
            });
        }
        let value = va.dot(vb);
        let needs = self.needs(a) || self.needs(b);
        let id = self.push(value, Op::Matmul(a.0, b.0), needs);
        self.check_finite("matmul", id)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<NodeId, TensorError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.dim() != vb.dim() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                a: va.dim(),
                b: vb.dim(),
            });
        }
        let mut value = va.clone();
        value.zip_mut_with(vb, |x, &y| *x = f(*x, y));
        let needs = self.needs(a) || self.needs(b);
        let id = self.push(value, op, needs);
        self.check_finite(op_name, id)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.nodes[a.0].value.mapv(|x| x.abs());
        let needs = self.needs(a);
        let id = self.push(value, Op::Abs(a.0), needs);
        self.check_finite("abs", id)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let zero = S::zero();
        let value = self.nodes[a.0].value.mapv(|x| x.maximum(zero));
        let needs = self.needs(a);
        let id = self.push(value, Op::Relu(a.0), needs);
        self.check_finite("relu", id)
    }

    /// `x + b` with `b` of shape `[1, C]` broadcast over the rows of `x`.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                a: vx.dim(),
                b: vb.dim(),
            });
        }
        let value = vx + &vb.row(0);
        let needs = self.needs(x) || self.needs(b);
        let id = self.push(value, Op::BiasAdd(x.0, b.0), needs);
        self.check_finite("bias_add", id)
    }

    /// `out[i] = x[idx[i]]`, with the sentinel index `x.nrows()` producing a
    /// zero row that carries no gradient. Larger indices are an error.
    pub fn gather_rows(&mut self, x: NodeId, idx: Rc<Vec<u32>>) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        let (rows, cols) = vx.dim();
        let mut value = Array2::zeros((idx.len(), cols));
        for (i, &j) in idx.iter().enumerate() {
            let j = j as usize;
            if j < rows {
                value.row_mut(i).assign(&vx.row(j));
            } else if j > rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: j,
                    rows,
                });
            }
        }
        let needs = self.needs(x);
        let id = self.push(value, Op::GatherRows { x: x.0, idx }, needs);
        self.check_finite("gather_rows", id)
    }

    /// Averages the rows of each group: `out[g] = mean over {i : groups[i] = g}`.
    /// Group ids must be dense `0..n_groups` with every group non-empty.
    pub fn scatter_mean(
        &mut self,
        x: NodeId,
        groups: Rc<Vec<u32>>,
        n_groups: usize,
    ) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        let (rows, cols) = vx.dim();
        if groups.len() != rows {
            return Err(TensorError::Invalid {
                op: "scatter_mean",
                msg: format!("{} group ids for {rows} rows", groups.len()),
            });
        }
        let mut counts = vec![0u32; n_groups];
        for &g in groups.iter() {
            if g as usize >= n_groups {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_mean",
                    index: g as usize,
                    rows: n_groups,
                });
            }
            counts[g as usize] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(TensorError::Invalid {
                op: "scatter_mean",
                msg: format!("group {g} is empty"),
            });
        }
        let mut value: Array2<S> = Array2::zeros((n_groups, cols));
        for (i, &g) in groups.iter().enumerate() {
            let row = vx.row(i);
            let mut acc = value.row_mut(g as usize);
            acc += &row;
        }
        for (g, mut row) in value.axis_iter_mut(Axis(0)).enumerate() {
            let inv = S::from_f64(1.0 / counts[g] as f64);
            row.mapv_inplace(|v| v * inv);
        }
        let needs = self.needs(x);
        let id = self.push(
            value,
            Op::ScatterMean {
                x: x.0,
                groups,
                counts,
            },
            needs,
        );
        self.check_finite("scatter_mean", id)
    }

    /// Column means: `[N, C] -> [1, C]`. The global average pool.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        if vx.nrows() == 0 {
            return Err(TensorError::Invalid {
                op: "mean_rows",
                msg: "empty tensor".into(),
            });
        }
        let inv = S::from_f64(1.0 / vx.nrows() as f64);
        let value = vx
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|v| v * inv);
        let needs = self.needs(x);
        let id = self.push(value, Op::MeanRows(x.0), needs);
        self.check_finite("mean_rows", id)
    }

    /// Horizontal concatenation; all parts must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.nrows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    a: (rows, 0),
                    b: v.dim(),
                });
            }
            value
                .slice_mut(ndarray::s![.., at..at + v.ncols()])
                .assign(v);
            at += v.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let id = self.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            needs,
        );
        self.check_finite("concat_cols", id)
    }

    /// Group normalisation over `[N, C]`: channels are split into `groups`
    /// contiguous blocks, each normalised over all rows and block channels,
    /// then scaled/shifted per channel by `gamma`/`beta` (shape `[1, C]`).
    pub fn group_norm(
        &mut self,
        x: NodeId,
        groups: usize,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        let (n, c) = vx.dim();
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::Invalid {
                op: "group_norm",
                msg: format!("{groups} groups do not divide {c} channels"),
            });
        }
        for p in [gamma, beta] {
            let vp = &self.nodes[p.0].value;
            if vp.dim() != (1, c) {
                return Err(TensorError::ShapeMismatch {
                    op: "group_norm",
                    a: (1, c),
                    b: vp.dim(),
                });
            }
        }
        let cg = c / groups;
        let count = S::from_f64((n * cg) as f64);
        let eps = S::from_f64(GROUP_NORM_EPS);
        let mut mean = vec![S::zero(); groups];
        let mut inv_std = vec![S::zero(); groups];
        let mut value = Array2::zeros((n, c));
        for g in 0..groups {
            let cols = ndarray::s![.., g * cg..(g + 1) * cg];
            let block = vx.slice(cols);
            let m = block.iter().fold(S::zero(), |a, &b| a + b) / count;
            let var = block
                .iter()
                .fold(S::zero(), |a, &b| a + (b - m) * (b - m))
                / count;
            let is = S::one() / (var + eps).sqrt();
            mean[g] = m;
            inv_std[g] = is;
            let vg = self.nodes[gamma.0].value.row(0);
            let vb = self.nodes[beta.0].value.row(0);
            let mut out = value.slice_mut(cols);
            for (mut orow, xrow) in out.axis_iter_mut(Axis(0)).zip(block.axis_iter(Axis(0))) {
                for (k, (o, &xv)) in orow.iter_mut().zip(xrow.iter()).enumerate() {
                    let ch = g * cg + k;
                    *o = (xv - m) * is * vg[ch] + vb[ch];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(
            value,
            Op::GroupNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                groups,
                mean,
                inv_std,
            },
            needs,
        );
        self.check_finite("group_norm", id)
    }

    /// Mean softmax cross entropy over the rows of `logits` (`[N, K]`),
    /// with one class index per row. Returns a `[1, 1]` scalar.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Rc<Vec<u32>>,
    ) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[logits.0].value;
        let (n, k) = vx.dim();
        if targets.len() != n {
            return Err(TensorError::Invalid {
                op: "softmax_cross_entropy",
                msg: format!("{} targets for {n} rows", targets.len()),
            });
        }
        let mut probs = Array2::zeros((n, k));
        let mut loss = S::zero();
        for (i, row) in vx.axis_iter(Axis(0)).enumerate() {
            let t = targets[i] as usize;
            if t >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    rows: k,
                });
            }
            let max = row.iter().fold(row[0], |a, &b| a.maximum(b));
            let mut denom = S::zero();
            for &v in row.iter() {
                denom = denom + (v - max).exp();
            }
            for (j, &v) in row.iter().enumerate() {
                probs[(i, j)] = (v - max).exp() / denom;
            }
            loss = loss - ((vx[(i, t)] - max) - denom.ln());
        }
        loss = loss / S::from_f64(n as f64);
        let value = Array2::from_elem((1, 1), loss);
        let needs = self.needs(logits);
        let id = self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                targets,
                probs,
            },
            needs,
        );
        self.check_finite("softmax_cross_entropy", id)
    }

    /// Applies a recorded collapse sequence to the rows of `x`: each step
    /// replaces its two surviving rows by three-way means, then the
    /// surviving rows are compacted. See [`RowMergePlan`].
    pub fn pool_rows(&mut self, x: NodeId, plan: Rc<RowMergePlan>) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        if vx.nrows() != plan.rows_before {
            return Err(TensorError::Invalid {
                op: "pool_rows",
                msg: format!(
                    "tensor has {} rows, plan expects {}",
                    vx.nrows(),
                    plan.rows_before
                ),
            });
        }
        let third = S::from_f64(1.0 / 3.0);
        let mut work = vx.clone();
        let cols = work.ncols();
        for &[p, b, q, d, e] in &plan.steps {
            for col in 0..cols {
                let ev = work[(e as usize, col)];
                let pv = (work[(p as usize, col)] + work[(b as usize, col)] + ev) * third;
                let qv = (work[(q as usize, col)] + work[(d as usize, col)] + ev) * third;
                work[(p as usize, col)] = pv;
                work[(q as usize, col)] = qv;
            }
        }
        let mut value = Array2::zeros((plan.alive.len(), cols));
        for (i, &r) in plan.alive.iter().enumerate() {
            value.row_mut(i).assign(&work.row(r as usize));
        }
        let needs = self.needs(x);
        let id = self.push(value, Op::PoolRows { x: x.0, plan }, needs);
        self.check_finite("pool_rows", id)
    }

    /// Exact reverse of [`Tape::pool_rows`] as a *copy* operation: every row
    /// of the pooled tensor is copied back onto all members of its merge
    /// group; centre rows (killed by both groups of a step) receive the mean
    /// of the two group survivors.
    pub fn unpool_rows(
        &mut self,
        x: NodeId,
        plan: Rc<RowMergePlan>,
    ) -> Result<NodeId, TensorError> {
        let vx = &self.nodes[x.0].value;
        if vx.nrows() != plan.alive.len() {
            return Err(TensorError::Invalid {
                op: "unpool_rows",
                msg: format!(
                    "tensor has {} rows, plan pools to {}",
                    vx.nrows(),
                    plan.alive.len()
                ),
            });
        }
        let cols = vx.ncols();
        let half = S::from_f64(0.5);
        let mut value: Array2<S> = Array2::zeros((plan.rows_before, cols));
        for (i, &r) in plan.alive.iter().enumerate() {
            value.row_mut(r as usize).assign(&vx.row(i));
        }
        for &[p, b, q, d, e] in plan.steps.iter().rev() {
            for col in 0..cols {
                let pv = value[(p as usize, col)];
                let qv = value[(q as usize, col)];
                value[(b as usize, col)] = pv;
                value[(d as usize, col)] = qv;
                value[(e as usize, col)] = (pv + qv) * half;
            }
        }
        let needs = self.needs(x);
        let id = self.push(value, Op::UnpoolRows { x: x.0, plan }, needs);
        self.check_finite("unpool_rows", id)
    }

    /// `x @ w + b` — the fully-connected layer as one call.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let xw = self.matmul(x, w)?;
        self.bias_add(xw, b)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn accumulate(grads: &mut [Option<Array2<S>>], id: usize, delta: Array2<S>) {
        match &mut grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. Afterwards every `needs_grad`
    /// *leaf* that feeds the loss answers [`Tape::grad`]; interior
    /// gradients are dropped once consumed. Running it again recomputes
    /// from scratch.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let dim = self.nodes[loss.0].value.dim();
        if dim != (1, 1) {
            return Err(TensorError::NotScalarLoss(dim));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<S>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let ga = g.dot(&self.nodes[b].value.t());
                        Self::accumulate(&mut grads, a, ga);
                    }
                    if self.nodes[b].needs_grad {
                        let gb = self.nodes[a].value.t().dot(&g);
                        Self::accumulate(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if self.nodes[b].needs_grad {
                        Self::accumulate(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if self.nodes[b].needs_grad {
                        Self::accumulate(&mut grads, b, g.mapv(|v| S::zero() - v));
                    }
                }
                Op::Abs(a) => {
                    let a = *a;
                    if self.nodes[a].needs_grad {
                        let mut d = g;
                        d.zip_mut_with(&self.nodes[a].value, |gv, &xv| {
                            *gv = if xv > S::zero() {
                                *gv
                            } else if xv < S::zero() {
                                S::zero() - *gv
                            } else {
                                S::zero()
                            };
                        });
                        Self::accumulate(&mut grads, a, d);
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    if self.nodes[a].needs_grad {
                        let mut d = g;
                        d.zip_mut_with(&self.nodes[a].value, |gv, &xv| {
                            if xv <= S::zero() {
                                *gv = S::zero();
                            }
                        });
                        Self::accumulate(&mut grads, a, d);
                    }
                }
                Op::BiasAdd(x, b) => {
                    let (x, b) = (*x, *b);
                    if self.nodes[b].needs_grad {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::accumulate(&mut grads, b, gb);
                    }
                    if self.nodes[x].needs_grad {
                        Self::accumulate(&mut grads, x, g);
                    }
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let rows = self.nodes[x].value.nrows();
                        let mut gx: Array2<S> = Array2::zeros(self.nodes[x].value.dim());
                        for (i, &j) in idx.iter().enumerate() {
                            if (j as usize) < rows {
                                let mut row = gx.row_mut(j as usize);
                                row += &g.row(i);
                            }
                        }
                        Self::accumulate(&mut grads, x, gx);
                    }
                }
                Op::ScatterMean { x, groups, counts } => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let mut gx: Array2<S> = Array2::zeros(self.nodes[x].value.dim());
                        for (i, &grp) in groups.iter().enumerate() {
                            let inv = S::from_f64(1.0 / counts[grp as usize] as f64);
                            let mut row = gx.row_mut(i);
                            row.assign(&g.row(grp as usize));
                            row.mapv_inplace(|v| v * inv);
                        }
                        Self::accumulate(&mut grads, x, gx);
                    }
                }
                Op::MeanRows(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let rows = self.nodes[x].value.nrows();
                        let inv = S::from_f64(1.0 / rows as f64);
                        let mut gx = Array2::zeros(self.nodes[x].value.dim());
                        for mut row in gx.axis_iter_mut(Axis(0)) {
                            row.assign(&g.row(0));
                            row.mapv_inplace(|v| v * inv);
                        }
                        Self::accumulate(&mut grads, x, gx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[p].value.ncols();
                        if self.nodes[p].needs_grad {
                            let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                            Self::accumulate(&mut grads, p, gp);
                        }
                        at += w;
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    mean,
                    inv_std,
                } => {
                    let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                    let (nrows, c) = self.nodes[x].value.dim();
                    let cg = c / groups;
                    let count = S::from_f64((nrows * cg) as f64);
                    let vx = self.nodes[x].value.clone();
                    let vgamma = self.nodes[gamma].value.clone();
                    if self.nodes[beta].needs_grad {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::accumulate(&mut grads, beta, gb);
                    }
                    if self.nodes[gamma].needs_grad {
                        let mut gg: Array2<S> = Array2::zeros((1, c));
                        for grp in 0..groups {
                            let (m, is) = (mean[grp], inv_std[grp]);
                            for k in 0..cg {
                                let ch = grp * cg + k;
                                let mut acc = S::zero();
                                for r in 0..nrows {
                                    acc = acc + g[(r, ch)] * (vx[(r, ch)] - m) * is;
                                }
                                gg[(0, ch)] = acc;
                            }
                        }
                        Self::accumulate(&mut grads, gamma, gg);
                    }
                    if self.nodes[x].needs_grad {
                        // dx = is/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        let mut gx: Array2<S> = Array2::zeros((nrows, c));
                        for grp in 0..groups {
                            let (m, is) = (mean[grp], inv_std[grp]);
                            let mut sum_dxh = S::zero();
                            let mut sum_dxh_xh = S::zero();
                            for r in 0..nrows {
                                for k in 0..cg {
                                    let ch = grp * cg + k;
                                    let dxh = g[(r, ch)] * vgamma[(0, ch)];
                                    let xh = (vx[(r, ch)] - m) * is;
                                    sum_dxh = sum_dxh + dxh;
                                    sum_dxh_xh = sum_dxh_xh + dxh * xh;
                                }
                            }
                            for r in 0..nrows {
                                for k in 0..cg {
                                    let ch = grp * cg + k;
                                    let dxh = g[(r, ch)] * vgamma[(0, ch)];
                                    let xh = (vx[(r, ch)] - m) * is;
                                    gx[(r, ch)] = is / count
                                        * (count * dxh - sum_dxh - xh * sum_dxh_xh);
                                }
                            }
                        }
                        Self::accumulate(&mut grads, x, gx);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let logits = *logits;
                    if self.nodes[logits].needs_grad {
                        let n = probs.nrows();
                        let scale = g[(0, 0)] / S::from_f64(n as f64);
                        let mut gl = probs.clone();
                        for (i, &t) in targets.iter().enumerate() {
                            gl[(i, t as usize)] = gl[(i, t as usize)] - S::one();
                        }
                        gl.mapv_inplace(|v| v * scale);
                        Self::accumulate(&mut grads, logits, gl);
                    }
                }
                Op::PoolRows { x, plan } => {
                    let x = *x;
                    let plan = plan.clone();
                    if self.nodes[x].needs_grad {
                        let cols = g.ncols();
                        let third = S::from_f64(1.0 / 3.0);
                        let mut gw: Array2<S> =
                            Array2::zeros((plan.rows_before, cols));
                        for (i, &r) in plan.alive.iter().enumerate() {
                            gw.row_mut(r as usize).assign(&g.row(i));
                        }
                        for &[p, b, q, d, e] in plan.steps.iter().rev() {
                            for col in 0..cols {
                                let gp = gw[(p as usize, col)] * third;
                                let gq = gw[(q as usize, col)] * third;
                                gw[(p as usize, col)] = gp;
                                gw[(b as usize, col)] = gw[(b as usize, col)] + gp;
                                gw[(q as usize, col)] = gq;
                                gw[(d as usize, col)] = gw[(d as usize, col)] + gq;
                                gw[(e as usize, col)] = gw[(e as usize, col)] + gp + gq;
                            }
                        }
                        Self::accumulate(&mut grads, x, gw);
                    }
                }
                Op::UnpoolRows { x, plan } => {
                    let x = *x;
                    let plan = plan.clone();
                    if self.nodes[x].needs_grad {
                        let cols = g.ncols();
                        let half = S::from_f64(0.5);
                        let mut gy = g;
                        for &[p, b, q, d, e] in plan.steps.iter() {
                            for col in 0..cols {
                                let ge = gy[(e as usize, col)] * half;
                                let gb = gy[(b as usize, col)];
                                let gd = gy[(d as usize, col)];
                                gy[(p as usize, col)] = gy[(p as usize, col)] + gb + ge;
                                gy[(q as usize, col)] = gy[(q as usize, col)] + gd + ge;
                            }
                        }
                        let mut gx: Array2<S> = Array2::zeros(self.nodes[x].value.dim());
                        for (i, &r) in plan.alive.iter().enumerate() {
                            gx.row_mut(i).assign(&gy.row(r as usize));
                        }
                        Self::accumulate(&mut grads, x, gx);
                    }
                }
            }
            // Interior gradients can be dropped once consumed; leaves keep
            // theirs (handled by the early `continue` above).
        }
        self.grads = grads;
        Ok(())
    }
}
