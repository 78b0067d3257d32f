//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node to a [`Tape`] and returns its [`NodeId`].
//! Nodes are only ever appended, so creation order is a topological order
//! and [`Tape::backward`] is a single reverse sweep that visits each node
//! once. The tape is built fresh for every optimisation step and dropped
//! afterwards.
//!
//! ```
//! use malkit::tensor::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[1.0, 2.0]]);
//! let y = tape.param(array![[3.0], [4.0]]);
//! let xy = tape.matmul(x, y).unwrap();
//! tape.backward(xy).unwrap();
//! assert_eq!(tape.scalar(xy), 11.0);
//! assert_eq!(tape.grad(x).unwrap(), &array![[3.0, 4.0]]);
//! ```

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Guard used by [`Tape::log`] callers: `log(max(p, LOG_EPS))`.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId, f64),
    Mean(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    Pick(NodeId, Vec<usize>),
    SelectRows(NodeId, Vec<usize>),
    L2NormalizeRows {
        input: NodeId,
        norms: Vec<f64>,
        eps: f64,
    },
    SoftmaxRows(NodeId),
    GradReverse(NodeId, f64),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
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

    /// Drops every node. Outstanding [`NodeId`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.leaf(value, false)
    }

    /// Copies `x` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    /// Accumulated gradient, or `None` if backward never reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient with unreached nodes reported as zeros of the value's shape.
    pub fn grad_or_zeros(&self, id: NodeId) -> Array2<f64> {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.value(id).dim()),
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                left: shape(va),
                right: shape(vb),
            });
        }
        let value = va.dot(vb);
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Checks that `b` matches `a` exactly or is a single row broadcast over `a`.
    fn broadcast_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa == sb || (sb.0 == 1 && sb.1 == sa.1) {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    /// Elementwise `a + b`; `b` may be a 1×n row broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("add", a, b)?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.broadcast_check("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> NodeId {
        let value = self.value(a) + offset;
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Natural log of `max(x, eps)`. Entries clamped by the guard pass no gradient.
    pub fn log(&mut self, a: NodeId, eps: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(eps).ln());
        self.push(value, Op::Log(a, eps), &[a])
    }

    /// Mean of every entry, as a 1×1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), &[a])
    }

    /// Per-row sums: m×n → m×1.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumRows(a), &[a])
    }

    /// Gathers one column per row: `out[i, 0] = a[i, cols[i]]`.
    pub fn pick(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        if cols.len() != v.nrows() {
            return Err(Error::Shape {
                op: "pick",
                left: shape(v),
                right: (cols.len(), 1),
            });
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= v.ncols()) {
            return Err(Error::Contract(format!(
                "pick: column {c} out of range for {} columns",
                v.ncols()
            )));
        }
        let value = Array2::from_shape_fn((cols.len(), 1), |(i, _)| v[[i, cols[i]]]);
        Ok(self.push(value, Op::Pick(a, cols.to_vec()), &[a]))
    }

    /// Row gather: `out[i, :] = a[rows[i], :]`. Repeated rows are allowed.
    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::Contract(format!(
                "select_rows: row {r} out of range for {} rows",
                v.nrows()
            )));
        }
        let value = v.select(Axis(0), rows);
        Ok(self.push(value, Op::SelectRows(a, rows.to_vec()), &[a]))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        assert!(eps > 0.0, "l2_normalize_rows: eps must be positive");
        let v = self.value(a);
        let norms: Vec<f64> = v
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(eps))
            .collect();
        let mut value = v.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row /= n;
        }
        self.push(
            value,
            Op::L2NormalizeRows {
                input: a,
                norms,
                eps,
            },
            &[a],
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Identity on the forward pass; multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, a: NodeId, lambda: f64) -> NodeId {
        assert!(lambda >= 0.0, "grad_reverse: lambda must be non-negative");
        let value = self.value(a).clone();
        self.push(value, Op::GradReverse(a, lambda), &[a])
    }

    /// Populates gradients of every tracked ancestor of the 1×1 `root`.
    ///
    /// Leaf gradients accumulate across calls; call [`Tape::zero_grad`] to clear them.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let dim = self.value(root).dim();
        if dim != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {dim:?}"
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        accumulate(&mut self.nodes[root.0], Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (input, delta) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut self.nodes[input.0], delta);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Array2<f64>) -> Vec<(NodeId, Array2<f64>)> {
        let node = &self.nodes[idx];
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, g.dot(&self.value(*b).t())));
                }
                if wants(*b) {
                    out.push((*b, self.value(*a).t().dot(g)));
                }
                out
            }
            Op::Add(a, b) => {
                let mut out = vec![(*a, g.clone())];
                if wants(*b) {
                    out.push((*b, reduce_to(g.clone(), self.value(*b).dim())));
                }
                out
            }
            Op::Sub(a, b) => {
                let mut out = vec![(*a, g.clone())];
                if wants(*b) {
                    out.push((*b, reduce_to(-g, self.value(*b).dim())));
                }
                out
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, g * vb));
                }
                if wants(*b) {
                    out.push((*b, reduce_to(g * va, vb.dim())));
                }
                out
            }
            Op::Scale(a, f) => vec![(*a, g * *f)],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                vec![(*a, d)]
            }
            Op::Log(a, eps) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x > *eps { *d / x } else { 0.0 };
                });
                vec![(*a, d)]
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                vec![(*a, Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64))]
            }
            Op::Sum(a) => vec![(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]]))],
            Op::SumRows(a) => {
                let v = self.value(*a);
                let d = Array2::from_shape_fn(v.dim(), |(i, _)| g[[i, 0]]);
                vec![(*a, d)]
            }
            Op::Pick(a, cols) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (i, &c) in cols.iter().enumerate() {
                    d[[i, c]] = g[[i, 0]];
                }
                vec![(*a, d)]
            }
            Op::SelectRows(a, rows) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                vec![(*a, d)]
            }
            Op::L2NormalizeRows { input, norms, eps } => {
                let x = self.value(*input);
                let y = &node.value;
                let mut d = Array2::zeros(x.dim());
                #[allow(clippy::needless_range_loop)]
                for i in 0..x.nrows() {
                    let (gi, yi) = (g.row(i), y.row(i));
                    let n = norms[i];
                    let raw = x.row(i).dot(&x.row(i)).sqrt();
                    let mut di = d.row_mut(i);
                    if raw > *eps {
                        let proj = yi.dot(&gi);
                        Zip::from(&mut di)
                            .and(&gi)
                            .and(&yi)
                            .for_each(|d, &g, &y| *d = (g - y * proj) / n);
                    } else {
                        Zip::from(&mut di).and(&gi).for_each(|d, &g| *d = g / n);
                    }
                }
                vec![(*input, d)]
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let (gi, yi) = (g.row(i), y.row(i));
                    let inner = gi.dot(&yi);
                    Zip::from(d.row_mut(i))
                        .and(&gi)
                        .and(&yi)
                        .for_each(|d, &g, &y| *d = y * (g - inner));
                }
                vec![(*a, d)]
            }
            Op::GradReverse(a, lambda) => vec![(*a, g * -*lambda)],
        }
    }
}

fn accumulate(node: &mut Node, delta: Array2<f64>) {
    match &mut node.grad {
        Some(g) => *g += &delta,
        None => node.grad = Some(delta),
    }
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to(g: Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    if g.dim() == target {
        g
    } else {
        g.sum_axis(Axis(0)).insert_axis(Axis(0))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}
