use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use super::store::ParameterStore;
use super::tensor::{gemm, Tensor};
use super::NumericError;

type Result<T> = std::result::Result<T, NumericError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis of a rank-2 tensor. `Rows` is axis 0 (the point axis), `Cols` axis 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// A differentiable op implemented outside the graph, with a single input.
///
/// `forward` must be deterministic; it is re-run on replay.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, input: &Tensor) -> Result<Tensor>;
    /// Vector-Jacobian product: gradient w.r.t. `input` given the gradient of
    /// the output.
    fn backward(&self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<Tensor>;
}

#[derive(Clone)]
enum Op {
    Input(String),
    Constant,
    Param(String),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId, Axis),
    MaxPoolRows(NodeId),
    MeanRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>, Axis),
    Slice {
        input: NodeId,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId, Vec<usize>),
    LayerNorm(NodeId, f64),
    Custom(NodeId, Arc<dyn CustomOp>),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(parts, _) => parts.clone(),
            Op::Slice { input, .. } => vec![*input],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a, _)
            | Op::MaxPoolRows(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GatherRows(a, _)
            | Op::Reshape(a, _)
            | Op::LayerNorm(a, _)
            | Op::Custom(a, _) => vec![*a],
        }
    }

    fn tag(&self) -> &str {
        match self {
            Op::Input(_) => "input",
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::MaxPoolRows(_) => "maxpool_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::LayerNorm(..) => "layer_norm",
            Op::Custom(_, op) => op.name(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    label: Option<String>,
    /// Whether any parameter or input feeds this node; gradients are only
    /// propagated into such nodes.
    needs_grad: bool,
}

/// Define-by-run computation graph.
///
/// Builder methods take `&self` so calls can be nested; the tape lives in a
/// `RefCell`. A graph is single-threaded.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, NodeId>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Gradients of a scalar loss w.r.t. every node it depends on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }
}

fn node_name(id: usize, op: &Op, label: Option<&str>) -> String {
    match label {
        Some(l) => format!("node {id} `{l}` ({})", op.tag()),
        None => format!("node {id} ({})", op.tag()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Borrow of a node's current value.
    pub fn value_ref(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id.0].value)
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes.borrow()[id.0].value.data()[0]
    }

    pub fn shape(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape().to_vec()
    }

    /// Attach a name to a node; named nodes are reported by [`Graph::forward`].
    pub fn label(&self, id: NodeId, name: &str) -> NodeId {
        self.nodes.borrow_mut()[id.0].label = Some(name.to_string());
        id
    }

    fn push(&self, op: Op, value: Tensor) -> Result<NodeId> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.is_finite() {
            return Err(NumericError::NonFinite {
                node: node_name(id, &op, None),
            });
        }
        let needs_grad = match &op {
            Op::Input(_) | Op::Param(_) => true,
            Op::Constant => false,
            other => other.inputs().iter().any(|i| nodes[i.0].needs_grad),
        };
        nodes.push(Node {
            op,
            value,
            label: None,
            needs_grad,
        });
        Ok(NodeId(id))
    }

    fn apply(&self, op: Op) -> Result<NodeId> {
        let value = {
            let nodes = self.nodes.borrow();
            let id = nodes.len();
            eval(&op, &nodes).map_err(|e| name_error(e, id, &op, None))?
        };
        self.push(op, value)
    }

    /// Placeholder fed by name; its value can be replaced in [`Graph::forward`].
    pub fn input(&self, name: &str, value: Tensor) -> Result<NodeId> {
        let id = self.push(Op::Input(name.to_string()), value)?;
        Ok(self.label(id, name))
    }

    pub fn constant(&self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    /// Leaf node holding a snapshot of a stored parameter. Requesting the same
    /// name twice returns the same node.
    pub fn param(&self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))?
            .clone();
        let id = self.push(Op::Param(name.to_string()), value)?;
        self.label(id, name);
        self.params.borrow_mut().insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.borrow().get(name).copied()
    }

    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose(a))
    }

    /// Elementwise sum; `b` may be a `[1, C]` row broadcast over the rows of `a`.
    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub(a, b))
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul(a, b))
    }

    pub fn scale(&self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(a, c))
    }

    pub fn offset(&self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Offset(a, c))
    }

    pub fn neg(&self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    pub fn exp(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp(a))
    }

    pub fn log(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log(a))
    }

    pub fn tanh(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh(a))
    }

    pub fn relu(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu(a))
    }

    pub fn sigmoid(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid(a))
    }

    pub fn square(&self, a: NodeId) -> Result<NodeId> {
        self.mul(a, a)
    }

    pub fn softmax(&self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.apply(Op::Softmax(a, axis))
    }

    /// Column-wise max over rows: `[N, C] -> [1, C]`. Ties route the
    /// subgradient to the first maximal row.
    pub fn max_pool_rows(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::MaxPoolRows(a))
    }

    /// Column-wise mean over rows: `[N, C] -> [1, C]`.
    pub fn mean_rows(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::MeanRows(a))
    }

    pub fn sum(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum(a))
    }

    pub fn mean(&self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean(a))
    }

    pub fn concat(&self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        self.apply(Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&self, a: NodeId, rows: Range<usize>, cols: Range<usize>) -> Result<NodeId> {
        self.apply(Op::Slice {
            input: a,
            rows,
            cols,
        })
    }

    pub fn slice_rows(&self, a: NodeId, rows: Range<usize>) -> Result<NodeId> {
        let cols = self.nodes.borrow()[a.0].value.cols();
        self.slice(a, rows, 0..cols)
    }

    pub fn slice_cols(&self, a: NodeId, cols: Range<usize>) -> Result<NodeId> {
        let rows = self.nodes.borrow()[a.0].value.rows();
        self.slice(a, 0..rows, cols)
    }

    pub fn gather_rows(&self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.apply(Op::GatherRows(a, indices.to_vec()))
    }

    pub fn reshape(&self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(a, shape.to_vec()))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&self, a: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Op::LayerNorm(a, eps))
    }

    pub fn custom(&self, a: NodeId, op: Arc<dyn CustomOp>) -> Result<NodeId> {
        self.apply(Op::Custom(a, op))
    }

    /// Recompute every node in tape order, replacing input placeholders with
    /// `feeds`. Returns the values of all labelled nodes.
    pub fn forward(&self, feeds: &HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>> {
        let mut nodes = self.nodes.borrow_mut();
        for id in 0..nodes.len() {
            let value = match &nodes[id].op {
                Op::Input(name) => match feeds.get(name) {
                    Some(feed) => {
                        let cur = &nodes[id].value;
                        if feed.shape() != cur.shape() {
                            return Err(NumericError::ShapeMismatch {
                                node: node_name(id, &nodes[id].op, nodes[id].label.as_deref()),
                                detail: format!(
                                    "feed has shape {:?}, placeholder declared {:?}",
                                    feed.shape(),
                                    cur.shape()
                                ),
                            });
                        }
                        feed.clone()
                    }
                    None => continue,
                },
                Op::Constant | Op::Param(_) => continue,
                op => eval(op, &nodes)
                    .map_err(|e| name_error(e, id, op, nodes[id].label.as_deref()))?,
            };
            if !value.is_finite() {
                return Err(NumericError::NonFinite {
                    node: node_name(id, &nodes[id].op, nodes[id].label.as_deref()),
                });
            }
            nodes[id].value = value;
        }
        Ok(nodes
            .iter()
            .filter_map(|n| n.label.as_ref().map(|l| (l.clone(), n.value.clone())))
            .collect())
    }

    /// Gradients of the scalar `loss` w.r.t. every node it depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(NumericError::NonScalarLoss {
                node: node_name(loss.0, &nodes[loss.0].op, nodes[loss.0].label.as_deref()),
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(id, &nodes, &g, &mut grads)
                .map_err(|e| name_error(e, id, &nodes[id].op, nodes[id].label.as_deref()))?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Add `scale * dL/dp` into the store's gradient buffer for every
    /// parameter node that received a gradient.
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients,
        store: &mut ParameterStore,
        scale: f64,
    ) -> Result<()> {
        let nodes = self.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, grads.wrt(NodeId(id))) {
                store.accumulate_grad(name, g, scale)?;
            }
        }
        Ok(())
    }
}

fn name_error(e: NumericError, id: usize, op: &Op, label: Option<&str>) -> NumericError {
    match e {
        NumericError::BadShape(detail) => NumericError::ShapeMismatch {
            node: node_name(id, op, label),
            detail,
        },
        other => other,
    }
}

fn mismatch(what: &str, a: &Tensor, b: &Tensor) -> NumericError {
    NumericError::BadShape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn require_matrix(t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(NumericError::BadShape(format!(
            "expected rank-2 tensor, got {:?}",
            t.shape()
        )))
    }
}

enum Broadcast {
    Same,
    Row,
}

fn broadcast_kind(a: &Tensor, b: &Tensor, what: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if a.is_matrix() && b.is_matrix() && b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else {
        Err(mismatch(what, a, b))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let kind = broadcast_kind(a, b, what)?;
    let cols = a.cols();
    let data = match kind {
        Broadcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Row => a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % cols]))
            .collect(),
    };
    Tensor::new(a.shape().to_vec(), data)
}

/// Reduce a gradient shaped like `a` down to `b`'s shape (undo broadcast).
fn unbroadcast(g: &Tensor, b: &Tensor) -> Tensor {
    if g.shape() == b.shape() {
        return g.clone();
    }
    let cols = b.cols();
    let mut out = vec![0.0; cols];
    for row in g.data().chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |id: &NodeId| &nodes[id.0].value;
    match op {
        Op::Input(_) | Op::Constant | Op::Param(_) => {
            unreachable!("leaf nodes are never evaluated")
        }
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            require_matrix(a)?;
            require_matrix(b)?;
            if a.cols() != b.rows() {
                return Err(mismatch("matmul inner dims", a, b));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
            Tensor::matrix(m, n, out)
        }
        Op::Transpose(a) => {
            require_matrix(v(a))?;
            Ok(v(a).transpose())
        }
        Op::Add(a, b) => zip_broadcast(v(a), v(b), "add", |x, y| x + y),
        Op::Sub(a, b) => zip_broadcast(v(a), v(b), "sub", |x, y| x - y),
        Op::Mul(a, b) => zip_broadcast(v(a), v(b), "mul", |x, y| x * y),
        Op::Scale(a, c) => Ok(v(a).map(|x| x * c)),
        Op::Offset(a, c) => Ok(v(a).map(|x| x + c)),
        Op::Exp(a) => Ok(v(a).map(f64::exp)),
        Op::Log(a) => Ok(v(a).map(f64::ln)),
        Op::Tanh(a) => Ok(v(a).map(f64::tanh)),
        Op::Relu(a) => Ok(v(a).map(|x| if x > 0.0 { x } else { 0.0 })),
        Op::Sigmoid(a) => Ok(v(a).map(sigmoid)),
        Op::Softmax(a, axis) => {
            let a = v(a);
            require_matrix(a)?;
            Ok(softmax(a, *axis))
        }
        Op::MaxPoolRows(a) => {
            let a = v(a);
            require_matrix(a)?;
            let (_, idx) = column_argmax(a);
            let cols = a.cols();
            Ok(Tensor::row(
                (0..cols).map(|c| a.data()[idx[c] * cols + c]).collect(),
            ))
        }
        Op::MeanRows(a) => {
            let a = v(a);
            require_matrix(a)?;
            let g = unbroadcast(a, &Tensor::zeros(&[1, a.cols()]));
            let n = a.rows() as f64;
            Ok(g.map(|x| x / n))
        }
        Op::Sum(a) => Ok(Tensor::scalar(v(a).sum())),
        Op::Mean(a) => {
            let a = v(a);
            Ok(Tensor::scalar(a.sum() / a.len() as f64))
        }
        Op::Concat(parts, axis) => {
            let ts: Vec<&Tensor> = parts.iter().map(v).collect();
            concat(&ts, *axis)
        }
        Op::Slice { input, rows, cols } => {
            let a = v(input);
            require_matrix(a)?;
            if rows.end > a.rows() || cols.end > a.cols() || rows.start > rows.end || cols.start > cols.end {
                return Err(NumericError::BadShape(format!(
                    "slice [{rows:?}, {cols:?}] out of bounds for {:?}",
                    a.shape()
                )));
            }
            let mut out = Vec::with_capacity(rows.len() * cols.len());
            for r in rows.clone() {
                out.extend_from_slice(&a.row_slice(r)[cols.clone()]);
            }
            Tensor::matrix(rows.len(), cols.len(), out)
        }
        Op::GatherRows(a, idx) => {
            let a = v(a);
            require_matrix(a)?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
                return Err(NumericError::BadShape(format!(
                    "gather index {bad} out of range for {} rows",
                    a.rows()
                )));
            }
            let mut out = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx {
                out.extend_from_slice(a.row_slice(i));
            }
            Tensor::matrix(idx.len(), a.cols(), out)
        }
        Op::Reshape(a, shape) => v(a).clone().reshaped(shape.clone()),
        Op::LayerNorm(a, eps) => {
            let a = v(a);
            require_matrix(a)?;
            Ok(layer_norm(a, *eps).0)
        }
        Op::Custom(a, op) => op.forward(v(a)),
    }
}

fn softmax(a: &Tensor, axis: Axis) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = a.data().to_vec();
    let (outer, inner, stride_o, stride_i) = match axis {
        Axis::Cols => (r, c, c, 1),
        Axis::Rows => (c, r, 1, c),
    };
    for o in 0..outer {
        let idx = |i: usize| o * stride_o + i * stride_i;
        let max = (0..inner).map(|i| out[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..inner {
            let e = (out[idx(i)] - max).exp();
            out[idx(i)] = e;
            total += e;
        }
        for i in 0..inner {
            out[idx(i)] /= total;
        }
    }
    Tensor::matrix(r, c, out).expect("same shape")
}

fn column_argmax(a: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let cols = a.cols();
    let mut best = a.row_slice(0).to_vec();
    let mut idx = vec![0; cols];
    for r in 1..a.rows() {
        for (c, &x) in a.row_slice(r).iter().enumerate() {
            if x > best[c] {
                best[c] = x;
                idx[c] = r;
            }
        }
    }
    (best, idx)
}

/// Returns (normalized, per-row inverse std).
fn layer_norm(a: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let c = a.cols();
    let mut out = Vec::with_capacity(a.len());
    let mut inv = Vec::with_capacity(a.rows());
    for row in a.data().chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().map(|x| (x - mean) * s));
        inv.push(s);
    }
    (Tensor::new(a.shape().to_vec(), out).expect("same shape"), inv)
}

fn concat(ts: &[&Tensor], axis: Axis) -> Result<Tensor> {
    let first = ts
        .first()
        .ok_or_else(|| NumericError::BadShape("concat of nothing".into()))?;
    for t in ts {
        require_matrix(t)?;
    }
    match axis {
        Axis::Rows => {
            let cols = first.cols();
            if ts.iter().any(|t| t.cols() != cols) {
                return Err(NumericError::BadShape("concat rows: column counts differ".into()));
            }
            let rows = ts.iter().map(|t| t.rows()).sum();
            let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::matrix(rows, cols, data)
        }
        Axis::Cols => {
            let rows = first.rows();
            if ts.iter().any(|t| t.rows() != rows) {
                return Err(NumericError::BadShape("concat cols: row counts differ".into()));
            }
            let cols: usize = ts.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in ts {
                    data.extend_from_slice(t.row_slice(r));
                }
            }
            Tensor::matrix(rows, cols, data)
        }
    }
}

fn add_grad(nodes: &[Node], grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    if !nodes[id.0].needs_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop(id: usize, nodes: &[Node], g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let node = &nodes[id];
    let v = |id: &NodeId| &nodes[id.0].value;
    let y = &node.value;
    match &node.op {
        Op::Input(_) | Op::Constant | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (v(a), v(b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[a.0].needs_grad {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                add_grad(nodes, grads, *a, Tensor::matrix(m, k, da)?);
            }
            if nodes[b.0].needs_grad {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                add_grad(nodes, grads, *b, Tensor::matrix(k, n, db)?);
            }
        }
        Op::Transpose(a) => add_grad(nodes, grads, *a, g.transpose()),
        Op::Add(a, b) => {
            add_grad(nodes, grads, *a, g.clone());
            add_grad(nodes, grads, *b, unbroadcast(g, v(b)));
        }
        Op::Sub(a, b) => {
            add_grad(nodes, grads, *a, g.clone());
            add_grad(nodes, grads, *b, unbroadcast(&g.map(|x| -x), v(b)));
        }
        Op::Mul(a, b) => {
            if nodes[a.0].needs_grad {
                let da = zip_broadcast(g, v(b), "mul grad", |x, y| x * y)?;
                add_grad(nodes, grads, *a, da);
            }
            if nodes[b.0].needs_grad {
                let full_db = zip_broadcast(g, v(a), "mul grad", |x, y| x * y)?;
                add_grad(nodes, grads, *b, unbroadcast(&full_db, v(b)));
            }
        }
        Op::Scale(a, c) => add_grad(nodes, grads, *a, g.map(|x| x * c)),
        Op::Offset(a, _) => add_grad(nodes, grads, *a, g.clone()),
        Op::Exp(a) => add_grad(nodes, grads, *a, zip(g, y, |g, y| g * y)),
        Op::Log(a) => add_grad(nodes, grads, *a, zip(g, v(a), |g, x| g / x)),
        Op::Tanh(a) => add_grad(nodes, grads, *a, zip(g, y, |g, y| g * (1.0 - y * y))),
        Op::Relu(a) => add_grad(nodes, grads, *a, zip(g, v(a), |g, x| if x > 0.0 { g } else { 0.0 })),
        Op::Sigmoid(a) => add_grad(nodes, grads, *a, zip(g, y, |g, y| g * y * (1.0 - y))),
        Op::Softmax(a, axis) => {
            let (r, c) = (y.rows(), y.cols());
            let mut out = vec![0.0; r * c];
            let (outer, inner, so, si) = match axis {
                Axis::Cols => (r, c, c, 1),
                Axis::Rows => (c, r, 1, c),
            };
            for o in 0..outer {
                let idx = |i: usize| o * so + i * si;
                let dot: f64 = (0..inner).map(|i| g.data()[idx(i)] * y.data()[idx(i)]).sum();
                for i in 0..inner {
                    out[idx(i)] = y.data()[idx(i)] * (g.data()[idx(i)] - dot);
                }
            }
            add_grad(nodes, grads, *a, Tensor::matrix(r, c, out)?);
        }
        Op::MaxPoolRows(a) => {
            let av = v(a);
            let (_, idx) = column_argmax(av);
            let cols = av.cols();
            let mut out = Tensor::zeros(av.shape());
            for (c, &r) in idx.iter().enumerate() {
                out.data_mut()[r * cols + c] = g.data()[c];
            }
            add_grad(nodes, grads, *a, out);
        }
        Op::MeanRows(a) => {
            let av = v(a);
            let n = av.rows() as f64;
            let cols = av.cols();
            let data = (0..av.len()).map(|i| g.data()[i % cols] / n).collect();
            add_grad(nodes, grads, *a, Tensor::new(av.shape().to_vec(), data)?);
        }
        Op::Sum(a) => add_grad(nodes, grads, *a, Tensor::full(v(a).shape(), g.item())),
        Op::Mean(a) => {
            let av = v(a);
            add_grad(nodes, grads, *a, Tensor::full(av.shape(), g.item() / av.len() as f64));
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for p in parts {
                let pv = v(p);
                let part = match axis {
                    Axis::Rows => {
                        let n = pv.len();
                        let t = Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        t
                    }
                    Axis::Cols => {
                        let c = pv.cols();
                        let mut data = Vec::with_capacity(pv.len());
                        for r in 0..pv.rows() {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                        }
                        offset += c;
                        Tensor::new(pv.shape().to_vec(), data)?
                    }
                };
                add_grad(nodes, grads, *p, part);
            }
        }
        Op::Slice { input, rows, cols } => {
            let av = v(input);
            let mut out = Tensor::zeros(av.shape());
            let ac = av.cols();
            let w = cols.len();
            for (i, r) in rows.clone().enumerate() {
                let dst = &mut out.data_mut()[r * ac + cols.start..r * ac + cols.end];
                dst.copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            add_grad(nodes, grads, *input, out);
        }
        Op::GatherRows(a, idx) => {
            let av = v(a);
            let c = av.cols();
            let mut out = Tensor::zeros(av.shape());
            for (i, &r) in idx.iter().enumerate() {
                for j in 0..c {
                    out.data_mut()[r * c + j] += g.data()[i * c + j];
                }
            }
            add_grad(nodes, grads, *a, out);
        }
        Op::Reshape(a, _) => add_grad(nodes, grads, *a, g.clone().reshaped(v(a).shape().to_vec())?),
        Op::LayerNorm(a, eps) => {
            let av = v(a);
            let (_, inv) = layer_norm(av, *eps);
            let c = av.cols();
            let mut out = Vec::with_capacity(av.len());
            for (r, s) in inv.iter().enumerate() {
                let gr = g.row_slice(r);
                let yr = y.row_slice(r);
                let mg = gr.iter().sum::<f64>() / c as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                out.extend(gr.iter().zip(yr).map(|(gi, yi)| s * (gi - mg - yi * mgy)));
            }
            add_grad(nodes, grads, *a, Tensor::new(av.shape().to_vec(), out)?);
        }
        Op::Custom(a, op) => {
            let da = op.backward(v(a), y, g)?;
            if da.shape() != v(a).shape() {
                return Err(mismatch("custom op gradient", &da, v(a)));
            }
            add_grad(nodes, grads, *a, da);
        }
    }
    Ok(())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
