//! Reverse-mode automatic differentiation over an explicit operation graph.
//!
//! A graph is built once from leaves (named inputs, shared parameters,
//! constants) and operation nodes, evaluated with concrete input tensors,
//! then differentiated backwards. Nodes are stored in construction order,
//! which is a topological order by definition since an operation can only
//! reference earlier nodes. Intermediate activations are retained for the
//! backward pass; gradients accumulate additively when a node feeds several
//! consumers or a parameter appears as several leaves.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels;
use super::kernels::NormView;
use super::spectral::{self, SpectralState};
use super::tensor::{Param, Scalar, Tensor};
use super::DiffError;

pub type NodeId = usize;

/// Whether normalization layers use batch statistics (training) or running
/// statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Persistent batch-normalization statistics, shared between the owning
/// model and any graphs that normalize with it.
#[derive(Debug, Clone)]
pub struct BnState<T: Scalar> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(0.9),
            eps: T::from_f64(1e-5),
        }
    }
}

pub type SharedBn<T> = Rc<RefCell<BnState<T>>>;
pub type SharedSn<T> = Rc<RefCell<SpectralState<T>>>;

enum Op<T: Scalar> {
    Input { name: String },
    Param(Param<T>),
    Const(Tensor<T>),
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, b: NodeId },
    AddChannelBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: T },
    AddScalar { x: NodeId, c: T },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, alpha: T },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Exp { x: NodeId },
    Ln { x: NodeId, floor: T },
    Clamp { x: NodeId, lo: T, hi: T },
    Softmax { x: NodeId },
    PickColumn { x: NodeId, indices: Vec<usize> },
    SliceCols { x: NodeId, start: usize, end: usize },
    ConcatCols { a: NodeId, b: NodeId },
    RowSum { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    Reshape { x: NodeId },
    Conv2d { x: NodeId, k: NodeId, stride: usize, padding: usize },
    ConvTranspose2d { x: NodeId, k: NodeId, stride: usize, padding: usize },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, state: SharedBn<T>, mode: Mode },
    CondBatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: SharedBn<T>,
        classes: Vec<usize>,
        mode: Mode,
    },
    SpectralNorm { w: NodeId, state: SharedSn<T> },
}

impl<T: Scalar> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Exp { .. } => "exp",
            Op::Ln { .. } => "ln",
            Op::Clamp { .. } => "clamp",
            Op::Softmax { .. } => "softmax",
            Op::PickColumn { .. } => "pick_column",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::RowSum { .. } => "row_sum",
            Op::SumAll { .. } => "sum_all",
            Op::MeanAll { .. } => "mean_all",
            Op::Reshape { .. } => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::BatchNorm { .. } => "batch_norm",
            Op::CondBatchNorm { .. } => "cond_batch_norm",
            Op::SpectralNorm { .. } => "spectral_norm",
        }
    }
}

enum Saved<T> {
    None,
    Norm { xhat: Vec<T>, var: Vec<T>, mode: Mode },
    Spectral { u: Vec<T>, v: Vec<T>, sigma: T },
}

struct Node<T: Scalar> {
    op: Op<T>,
    shape: Vec<usize>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    values: Vec<Vec<T>>,
    grads: Vec<Option<Vec<T>>>,
    saved: Vec<Saved<T>>,
    input_ids: HashMap<String, NodeId>,
    output_ids: Vec<(String, NodeId)>,
    evaluated: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            saved: Vec::new(),
            input_ids: HashMap::new(),
            output_ids: Vec::new(),
            evaluated: false,
        }
    }

    fn describe(&self, id: NodeId) -> String {
        format!("node #{} ({})", id, self.nodes[id].op.kind())
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Shape a node will produce, known at build time.
    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, needs_grad });
        self.values.push(Vec::new());
        self.grads.push(None);
        self.saved.push(Saved::None);
        self.evaluated = false;
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // ---- leaves ----------------------------------------------------------

    /// Named placeholder bound at evaluation time.
    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> NodeId {
        self.input_opts(name, shape, false)
    }

    /// Named placeholder whose gradient is retained (readable through
    /// [`Graph::input_grad`] after backprop).
    pub fn input_with_grad(&mut self, name: &str, shape: Vec<usize>) -> NodeId {
        self.input_opts(name, shape, true)
    }

    fn input_opts(&mut self, name: &str, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        let id = self.push(Op::Input { name: name.to_string() }, shape, requires_grad);
        self.input_ids.insert(name.to_string(), id);
        id
    }

    /// Leaf bound to a shared trainable tensor. The accumulated gradient is
    /// flushed into the parameter when backprop finishes.
    pub fn param(&mut self, p: &Param<T>) -> NodeId {
        let shape = p.shape();
        self.push(Op::Param(p.clone()), shape, true)
    }

    /// Leaf with a fixed value that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        let shape = t.shape.clone();
        self.push(Op::Const(t), shape, false)
    }

    pub fn constant_scalar(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch(format!(
                "matmul of {} {:?} with {} {:?}",
                self.describe(a),
                sa,
                self.describe(b),
                sb
            )));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, vec![sa[0], sb[1]], needs))
    }

    /// x[m,n] + bias[n], broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(DiffError::ShapeMismatch(format!(
                "add_bias of {} {:?} with {} {:?}",
                self.describe(x),
                sx,
                self.describe(b),
                sb
            )));
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Op::AddBias { x, b }, sx, needs))
    }

    /// x[n,c,h,w] + bias[c], broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 4 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(DiffError::ShapeMismatch(format!(
                "add_channel_bias of {} {:?} with {} {:?}",
                self.describe(x),
                sx,
                self.describe(b),
                sb
            )));
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Op::AddChannelBias { x, b }, sx, needs))
    }

    fn binary_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        make: impl FnOnce(NodeId, NodeId) -> Op<T>,
        what: &str,
    ) -> Result<NodeId, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch(format!(
                "{} of {} {:?} with {} {:?}",
                what,
                self.describe(a),
                self.shape(a),
                self.describe(b),
                self.shape(b)
            )));
        }
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(make(a, b), shape, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape(a, b, |a, b| Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape(a, b, |a, b| Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.binary_same_shape(a, b, |a, b| Op::Mul { a, b }, "mul")
    }

    fn unary(&mut self, x: NodeId, op: Op<T>) -> NodeId {
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(op, shape, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        self.unary(x, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> NodeId {
        self.unary(x, Op::AddScalar { x, c })
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let n = self.scale(x, -T::one());
        self.add_scalar(n, T::one())
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: T) -> NodeId {
        self.unary(x, Op::LeakyRelu { x, alpha })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp { x })
    }

    /// Natural log with the argument floored at `floor` to keep losses
    /// finite when a probability underflows.
    pub fn ln_floored(&mut self, x: NodeId, floor: T) -> NodeId {
        self.unary(x, Op::Ln { x, floor })
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        self.unary(x, Op::Clamp { x, lo, hi })
    }

    /// Row-wise softmax over the last dimension of a [m,n] node.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        if self.shape(x).len() != 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "softmax needs a matrix, got {} {:?}",
                self.describe(x),
                self.shape(x)
            )));
        }
        Ok(self.unary(x, Op::Softmax { x }))
    }

    /// out[i] = x[i, indices[i]] for a [m,n] node.
    pub fn pick_column(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || indices.len() != sx[0] || indices.iter().any(|&j| j >= sx[1]) {
            return Err(DiffError::ShapeMismatch(format!(
                "pick_column on {} {:?} with {} indices",
                self.describe(x),
                sx,
                indices.len()
            )));
        }
        let needs = self.needs(x);
        Ok(self.push(Op::PickColumn { x, indices }, vec![sx[0]], needs))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || start >= end || end > sx[1] {
            return Err(DiffError::ShapeMismatch(format!(
                "slice_cols {}..{} on {} {:?}",
                start,
                end,
                self.describe(x),
                sx
            )));
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, end }, vec![sx[0], end - start], needs))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(DiffError::ShapeMismatch(format!(
                "concat_cols of {} {:?} with {} {:?}",
                self.describe(a),
                sa,
                self.describe(b),
                sb
            )));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols { a, b }, vec![sa[0], sa[1] + sb[1]], needs))
    }

    /// Sum each row of a [m,n] node down to a length-m vector.
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "row_sum needs a matrix, got {} {:?}",
                self.describe(x),
                sx
            )));
        }
        let needs = self.needs(x);
        Ok(self.push(Op::RowSum { x }, vec![sx[0]], needs))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let needs = self.needs(x);
        self.push(Op::SumAll { x }, vec![1], needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let needs = self.needs(x);
        self.push(Op::MeanAll { x }, vec![1], needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, DiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.shape(x).iter().product::<usize>() {
            return Err(DiffError::ShapeMismatch(format!(
                "reshape of {} {:?} to {:?}",
                self.describe(x),
                self.shape(x),
                shape
            )));
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape { x }, shape, needs))
    }

    /// Cross-correlation of [N,C,H,W] input with [O,C,kh,kw] kernel.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, DiffError> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] || stride == 0 {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d of {} {:?} with {} {:?}",
                self.describe(x),
                sx,
                self.describe(k),
                sk
            )));
        }
        let oh = kernels::conv_out_dim(sx[2], sk[2], stride, padding);
        let ow = kernels::conv_out_dim(sx[3], sk[3], stride, padding);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(DiffError::ShapeMismatch(format!(
                    "conv2d of {} {:?} with kernel {:?}, stride {}, padding {} yields empty output",
                    self.describe(x),
                    sx,
                    sk,
                    stride,
                    padding
                )))
            }
        };
        let needs = self.needs(x) || self.needs(k);
        Ok(self.push(
            Op::Conv2d { x, k, stride, padding },
            vec![sx[0], sk[0], oh, ow],
            needs,
        ))
    }

    /// Transposed convolution of [N,C,H,W] input with [C,O,kh,kw] kernel.
    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        k: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, DiffError> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[0] || stride == 0 {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d_transpose of {} {:?} with {} {:?}",
                self.describe(x),
                sx,
                self.describe(k),
                sk
            )));
        }
        let oh = kernels::conv_transpose_out_dim(sx[2], sk[2], stride, padding);
        let ow = kernels::conv_transpose_out_dim(sx[3], sk[3], stride, padding);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(DiffError::ShapeMismatch(format!(
                    "conv2d_transpose of {} {:?} with kernel {:?} yields empty output",
                    self.describe(x),
                    sx,
                    sk
                )))
            }
        };
        let needs = self.needs(x) || self.needs(k);
        Ok(self.push(
            Op::ConvTranspose2d { x, k, stride, padding },
            vec![sx[0], sk[1], oh, ow],
            needs,
        ))
    }

    /// Batch normalization with per-channel gain and bias vectors.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &SharedBn<T>,
        mode: Mode,
    ) -> Result<NodeId, DiffError> {
        let sx = self.shape(x).to_vec();
        let view = NormView::for_shape(&sx).ok_or_else(|| {
            DiffError::ShapeMismatch(format!(
                "batch_norm needs a matrix or NCHW input, got {} {:?}",
                self.describe(x),
                sx
            ))
        })?;
        for (g, what) in [(gamma, "gain"), (beta, "bias")] {
            if self.shape(g) != [view.channels] {
                return Err(DiffError::ShapeMismatch(format!(
                    "batch_norm {} {} {:?} does not match {} channels",
                    what,
                    self.describe(g),
                    self.shape(g),
                    view.channels
                )));
            }
        }
        if mode == Mode::Train && sx[0] < 2 {
            return Err(DiffError::Invalid(format!(
                "batch_norm on {} needs batch size >= 2 in training mode",
                self.describe(x)
            )));
        }
        if state.borrow().running_mean.len() != view.channels {
            return Err(DiffError::ShapeMismatch(format!(
                "batch_norm state has {} channels, input {} has {}",
                state.borrow().running_mean.len(),
                self.describe(x),
                view.channels
            )));
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Op::BatchNorm { x, gamma, beta, state: Rc::clone(state), mode },
            sx,
            needs,
        ))
    }

    /// Conditional batch normalization: per-class gain/bias tables [K,C],
    /// one row selected per sample by `classes`.
    pub fn cond_batch_norm(
        &mut self,
        x: NodeId,
        gamma_table: NodeId,
        beta_table: NodeId,
        classes: &[usize],
        state: &SharedBn<T>,
        mode: Mode,
    ) -> Result<NodeId, DiffError> {
        let sx = self.shape(x).to_vec();
        let view = NormView::for_shape(&sx).ok_or_else(|| {
            DiffError::ShapeMismatch(format!(
                "cond_batch_norm needs a matrix or NCHW input, got {} {:?}",
                self.describe(x),
                sx
            ))
        })?;
        let st = self.shape(gamma_table).to_vec();
        if st.len() != 2 || st[1] != view.channels || self.shape(beta_table) != st {
            return Err(DiffError::ShapeMismatch(format!(
                "cond_batch_norm tables {:?} do not match {} channels",
                st, view.channels
            )));
        }
        if classes.len() != view.outer {
            return Err(DiffError::ShapeMismatch(format!(
                "cond_batch_norm got {} class indices for batch of {}",
                classes.len(),
                view.outer
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= st[0]) {
            return Err(DiffError::Invalid(format!(
                "cond_batch_norm class index {} out of {} classes",
                bad, st[0]
            )));
        }
        if mode == Mode::Train && sx[0] < 2 {
            return Err(DiffError::Invalid(format!(
                "cond_batch_norm on {} needs batch size >= 2 in training mode",
                self.describe(x)
            )));
        }
        let needs = self.needs(x) || self.needs(gamma_table) || self.needs(beta_table);
        Ok(self.push(
            Op::CondBatchNorm {
                x,
                gamma: gamma_table,
                beta: beta_table,
                state: Rc::clone(state),
                classes: classes.to_vec(),
                mode,
            },
            sx,
            needs,
        ))
    }

    /// Weight divided by its spectral norm estimate, using the persistent
    /// power-iteration vector in `state` as-is. Running the iteration is the
    /// caller's responsibility (see [`spectral::power_iterate`]), which keeps
    /// this node an exact, differentiable function of the weight.
    pub fn spectral_norm(&mut self, w: NodeId, state: &SharedSn<T>) -> Result<NodeId, DiffError> {
        let sw = self.shape(w).to_vec();
        if sw.is_empty() {
            return Err(DiffError::ShapeMismatch("spectral_norm on empty shape".into()));
        }
        let rows = sw[0];
        if state.borrow().u.len() != rows {
            return Err(DiffError::ShapeMismatch(format!(
                "spectral_norm state vector length {} does not match {} output rows",
                state.borrow().u.len(),
                rows
            )));
        }
        let needs = self.needs(w);
        Ok(self.push(Op::SpectralNorm { w, state: Rc::clone(state) }, sw, needs))
    }

    /// Register a node under a name so callers can fetch it from the
    /// evaluation result map.
    pub fn output(&mut self, name: &str, id: NodeId) {
        self.output_ids.push((name.to_string(), id));
    }

    // ---- execution -------------------------------------------------------

    /// Run the forward pass with the given named inputs. Returns the named
    /// outputs registered via [`Graph::output`].
    pub fn evaluate(
        &mut self,
        inputs: &[(&str, &Tensor<T>)],
    ) -> Result<HashMap<String, Tensor<T>>, DiffError> {
        let mut bound: HashMap<&str, &Tensor<T>> = HashMap::new();
        for (name, t) in inputs {
            if !self.input_ids.contains_key(*name) {
                return Err(DiffError::UnknownName(name.to_string()));
            }
            bound.insert(name, t);
        }
        for (name, &id) in &self.input_ids {
            let t = bound
                .get(name.as_str())
                .ok_or_else(|| DiffError::UnboundInput(name.clone()))?;
            if t.shape != self.nodes[id].shape {
                return Err(DiffError::ShapeMismatch(format!(
                    "input `{}` has shape {:?}, node #{} expects {:?}",
                    name, t.shape, id, self.nodes[id].shape
                )));
            }
        }

        for id in 0..self.nodes.len() {
            self.grads[id] = None;
            self.saved[id] = Saved::None;
            let value = self.forward_node(id, &bound)?;
            debug_assert_eq!(value.len(), self.nodes[id].shape.iter().product::<usize>());
            self.values[id] = value;
        }
        self.evaluated = true;

        let mut out = HashMap::new();
        for (name, id) in &self.output_ids {
            out.insert(
                name.clone(),
                Tensor::from_vec(self.nodes[*id].shape.clone(), self.values[*id].clone())?,
            );
        }
        Ok(out)
    }

    fn forward_node(
        &mut self,
        id: NodeId,
        bound: &HashMap<&str, &Tensor<T>>,
    ) -> Result<Vec<T>, DiffError> {
        let shape = self.nodes[id].shape.clone();
        let out = match &self.nodes[id].op {
            Op::Input { name, .. } => bound[name.as_str()].data.clone(),
            Op::Param(p) => p.data_clone(),
            Op::Const(t) => t.data.clone(),
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut out = vec![T::zero(); m * n];
                kernels::matmul(&self.values[*a], &self.values[*b], m, k, n, &mut out);
                out
            }
            Op::AddBias { x, b } => {
                let n = self.shape(*x)[1];
                let bias = &self.values[*b];
                self.values[*x]
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + bias[i % n])
                    .collect()
            }
            Op::AddChannelBias { x, b } => {
                let sx = self.shape(*x);
                let (c, hw) = (sx[1], sx[2] * sx[3]);
                let bias = &self.values[*b];
                self.values[*x]
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + bias[(i / hw) % c])
                    .collect()
            }
            Op::Add { a, b } => self.values[*a]
                .iter()
                .zip(&self.values[*b])
                .map(|(&x, &y)| x + y)
                .collect(),
            Op::Sub { a, b } => self.values[*a]
                .iter()
                .zip(&self.values[*b])
                .map(|(&x, &y)| x - y)
                .collect(),
            Op::Mul { a, b } => self.values[*a]
                .iter()
                .zip(&self.values[*b])
                .map(|(&x, &y)| x * y)
                .collect(),
            Op::Scale { x, c } => self.values[*x].iter().map(|&v| v * *c).collect(),
            Op::AddScalar { x, c } => self.values[*x].iter().map(|&v| v + *c).collect(),
            Op::Relu { x } => self.values[*x]
                .iter()
                .map(|&v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
                .collect(),
            Op::LeakyRelu { x, alpha } => self.values[*x]
                .iter()
                .map(|&v| if v > T::zero() || v.is_nan() { v } else { v * *alpha })
                .collect(),
            Op::Tanh { x } => self.values[*x].iter().map(|&v| v.tanh()).collect(),
            Op::Sigmoid { x } => self.values[*x]
                .iter()
                .map(|&v| T::one() / (T::one() + (-v).exp()))
                .collect(),
            Op::Exp { x } => self.values[*x].iter().map(|&v| v.exp()).collect(),
            Op::Ln { x, floor } => self.values[*x]
                .iter()
                .map(|&v| {
                    // the floor guards underflow only; NaN must propagate so
                    // training can abort on a poisoned model
                    if v >= *floor {
                        v.ln()
                    } else if v.is_nan() {
                        v
                    } else {
                        floor.ln()
                    }
                })
                .collect(),
            Op::Clamp { x, lo, hi } => self.values[*x]
                .iter()
                .map(|&v| if v.is_nan() { v } else { v.max(*lo).min(*hi) })
                .collect(),
            Op::Softmax { x } => {
                let n = self.shape(*x)[1];
                let mut out = Vec::with_capacity(self.values[*x].len());
                for row in self.values[*x].chunks(n) {
                    let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
                    let exps: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
                    let sum: T = exps.iter().fold(T::zero(), |acc, &e| acc + e);
                    out.extend(exps.iter().map(|&e| e / sum));
                }
                out
            }
            Op::PickColumn { x, indices } => {
                let n = self.shape(*x)[1];
                indices
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| self.values[*x][i * n + j])
                    .collect()
            }
            Op::SliceCols { x, start, end } => {
                let n = self.shape(*x)[1];
                let mut out = Vec::with_capacity(shape.iter().product());
                for row in self.values[*x].chunks(n) {
                    out.extend_from_slice(&row[*start..*end]);
                }
                out
            }
            Op::ConcatCols { a, b } => {
                let (na, nb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let rows = self.shape(*a)[0];
                let mut out = Vec::with_capacity(rows * (na + nb));
                for i in 0..rows {
                    out.extend_from_slice(&self.values[*a][i * na..(i + 1) * na]);
                    out.extend_from_slice(&self.values[*b][i * nb..(i + 1) * nb]);
                }
                out
            }
            Op::RowSum { x } => {
                let n = self.shape(*x)[1];
                self.values[*x]
                    .chunks(n)
                    .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
                    .collect()
            }
            Op::SumAll { x } => {
                vec![self.values[*x].iter().fold(T::zero(), |acc, &v| acc + v)]
            }
            Op::MeanAll { x } => {
                let n = T::from_f64(self.values[*x].len() as f64);
                vec![self.values[*x].iter().fold(T::zero(), |acc, &v| acc + v) / n]
            }
            Op::Reshape { x } => self.values[*x].clone(),
            Op::Conv2d { x, k, stride, padding } => {
                let sx = self.shape(*x).to_vec();
                let sk = self.shape(*k).to_vec();
                let mut out = vec![T::zero(); shape.iter().product()];
                kernels::conv2d_forward(
                    &self.values[*x],
                    &self.values[*k],
                    sx[0], sx[1], sx[2], sx[3],
                    sk[0], sk[2], sk[3],
                    *stride, *padding,
                    shape[2], shape[3],
                    &mut out,
                );
                out
            }
            Op::ConvTranspose2d { x, k, stride, padding } => {
                let sx = self.shape(*x).to_vec();
                let sk = self.shape(*k).to_vec();
                let mut out = vec![T::zero(); shape.iter().product()];
                kernels::conv2d_transpose_forward(
                    &self.values[*x],
                    &self.values[*k],
                    sx[0], sx[1], sx[2], sx[3],
                    sk[1], sk[2], sk[3],
                    *stride, *padding,
                    shape[2], shape[3],
                    &mut out,
                );
                out
            }
            Op::BatchNorm { x, gamma, beta, state, mode } => {
                let view = NormView::for_shape(self.shape(*x)).unwrap();
                let (xhat, var) =
                    Self::norm_forward(&self.values[*x], view, state, *mode);
                let gam = &self.values[*gamma];
                let bet = &self.values[*beta];
                let mut out = vec![T::zero(); xhat.len()];
                for o in 0..view.outer {
                    for c in 0..view.channels {
                        for i in 0..view.inner {
                            let j = view.idx(o, c, i);
                            out[j] = gam[c] * xhat[j] + bet[c];
                        }
                    }
                }
                self.saved[id] = Saved::Norm { xhat, var, mode: *mode };
                out
            }
            Op::CondBatchNorm { x, gamma, beta, state, classes, mode } => {
                let view = NormView::for_shape(self.shape(*x)).unwrap();
                let (xhat, var) =
                    Self::norm_forward(&self.values[*x], view, state, *mode);
                let gam = &self.values[*gamma];
                let bet = &self.values[*beta];
                let c_n = view.channels;
                let mut out = vec![T::zero(); xhat.len()];
                for o in 0..view.outer {
                    let k = classes[o];
                    for c in 0..c_n {
                        for i in 0..view.inner {
                            let j = view.idx(o, c, i);
                            out[j] = gam[k * c_n + c] * xhat[j] + bet[k * c_n + c];
                        }
                    }
                }
                self.saved[id] = Saved::Norm { xhat, var, mode: *mode };
                out
            }
            Op::SpectralNorm { w, state } => {
                let sw = self.shape(*w);
                let rows = sw[0];
                let cols: usize = sw[1..].iter().product();
                let u = state.borrow().u.clone();
                let (sigma, v, normalized) =
                    spectral::normalize_with(&self.values[*w], rows, cols, &u);
                self.saved[id] = Saved::Spectral { u, v, sigma };
                normalized
            }
        };
        Ok(out)
    }

    fn norm_forward(
        x: &[T],
        view: NormView,
        state: &SharedBn<T>,
        mode: Mode,
    ) -> (Vec<T>, Vec<T>) {
        match mode {
            Mode::Train => {
                let (mean, var) = kernels::channel_stats(x, view);
                let mut st = state.borrow_mut();
                let eps = st.eps;
                let mom = st.momentum;
                for c in 0..view.channels {
                    st.running_mean[c] = mom * st.running_mean[c] + (T::one() - mom) * mean[c];
                    st.running_var[c] = mom * st.running_var[c] + (T::one() - mom) * var[c];
                }
                let xhat = kernels::normalize(x, view, &mean, &var, eps);
                (xhat, var)
            }
            Mode::Eval => {
                let st = state.borrow();
                let xhat = kernels::normalize(x, view, &st.running_mean, &st.running_var, st.eps);
                (xhat, st.running_var.clone())
            }
        }
    }

    /// Tensor value of a node after evaluation.
    pub fn value(&self, id: NodeId) -> Result<Tensor<T>, DiffError> {
        if !self.evaluated {
            return Err(DiffError::NotEvaluated);
        }
        Tensor::from_vec(self.nodes[id].shape.clone(), self.values[id].clone())
    }

    pub fn value_data(&self, id: NodeId) -> Result<&[T], DiffError> {
        if !self.evaluated {
            return Err(DiffError::NotEvaluated);
        }
        Ok(&self.values[id])
    }

    /// Scalar value of a [1]-shaped node.
    pub fn scalar_value(&self, id: NodeId) -> Result<T, DiffError> {
        let data = self.value_data(id)?;
        if data.len() != 1 {
            return Err(DiffError::ShapeMismatch(format!(
                "{} is not a scalar",
                self.describe(id)
            )));
        }
        Ok(data[0])
    }

    /// Backward pass seeded with gradients for named outputs. Parameter
    /// leaves flush their accumulated gradient into the shared tensors.
    pub fn backprop(&mut self, output_grads: &[(&str, &[T])]) -> Result<(), DiffError> {
        let mut seeds = Vec::new();
        for (name, g) in output_grads {
            let id = self
                .output_ids
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, id)| *id)
                .ok_or_else(|| DiffError::UnknownName(name.to_string()))?;
            seeds.push((id, g.to_vec()));
        }
        self.backward_seeded(&seeds)
    }

    /// Backward pass from a single scalar node with upstream gradient 1.
    pub fn backward_scalar(&mut self, id: NodeId) -> Result<(), DiffError> {
        if !self.evaluated {
            return Err(DiffError::NotEvaluated);
        }
        if self.values[id].len() != 1 {
            return Err(DiffError::ShapeMismatch(format!(
                "backward_scalar on non-scalar {}",
                self.describe(id)
            )));
        }
        self.backward_seeded(&[(id, vec![T::one()])])
    }

    fn backward_seeded(&mut self, seeds: &[(NodeId, Vec<T>)]) -> Result<(), DiffError> {
        if !self.evaluated {
            return Err(DiffError::NotEvaluated);
        }
        for (id, g) in seeds {
            if g.len() != self.values[*id].len() {
                return Err(DiffError::ShapeMismatch(format!(
                    "gradient seed for {} has {} elements, value has {}",
                    self.describe(*id),
                    g.len(),
                    self.values[*id].len()
                )));
            }
            accumulate(&mut self.grads[*id], g);
        }

        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = self.grads[id].take().unwrap();
            self.backward_node(id, &g);
            // keep the gradient available for inspection
            self.grads[id] = Some(g);
        }

        for id in 0..self.nodes.len() {
            if let Op::Param(p) = &self.nodes[id].op {
                if let Some(g) = &self.grads[id] {
                    p.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, id: NodeId, g: &[T]) {
        macro_rules! push_grad {
            ($to:expr, $vec:expr) => {
                if self.nodes[$to].needs_grad {
                    accumulate(&mut self.grads[$to], &$vec);
                }
            };
        }
        match &self.nodes[id].op {
            Op::Input { .. } | Op::Param(_) | Op::Const(_) => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.nodes[a].needs_grad {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_accum_a_bt(g, &self.values[b], m, k, n, &mut da);
                    accumulate(&mut self.grads[a], &da);
                }
                if self.nodes[b].needs_grad {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_accum_at_b(&self.values[a], g, m, k, n, &mut db);
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::AddBias { x, b } => {
                let (x, b) = (*x, *b);
                let n = self.shape(x)[1];
                push_grad!(x, g.to_vec());
                if self.nodes[b].needs_grad {
                    let mut db = vec![T::zero(); n];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % n] += gv;
                    }
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::AddChannelBias { x, b } => {
                let (x, b) = (*x, *b);
                let sx = self.shape(x).to_vec();
                let (c, hw) = (sx[1], sx[2] * sx[3]);
                push_grad!(x, g.to_vec());
                if self.nodes[b].needs_grad {
                    let mut db = vec![T::zero(); c];
                    for (i, &gv) in g.iter().enumerate() {
                        db[(i / hw) % c] += gv;
                    }
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                push_grad!(a, g.to_vec());
                push_grad!(b, g.to_vec());
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                push_grad!(a, g.to_vec());
                if self.nodes[b].needs_grad {
                    let db: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let da: Vec<T> =
                        g.iter().zip(&self.values[b]).map(|(&gv, &bv)| gv * bv).collect();
                    accumulate(&mut self.grads[a], &da);
                }
                if self.nodes[b].needs_grad {
                    let db: Vec<T> =
                        g.iter().zip(&self.values[a]).map(|(&gv, &av)| gv * av).collect();
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<T> = g.iter().map(|&v| v * c).collect();
                push_grad!(x, dx);
            }
            Op::AddScalar { x, .. } => {
                let x = *x;
                push_grad!(x, g.to_vec());
            }
            Op::Relu { x } => {
                let x = *x;
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[x])
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                push_grad!(x, dx);
            }
            Op::LeakyRelu { x, alpha } => {
                let (x, alpha) = (*x, *alpha);
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[x])
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * alpha })
                    .collect();
                push_grad!(x, dx);
            }
            Op::Tanh { x } => {
                let x = *x;
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[id])
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                push_grad!(x, dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[id])
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                push_grad!(x, dx);
            }
            Op::Exp { x } => {
                let x = *x;
                let dx: Vec<T> =
                    g.iter().zip(&self.values[id]).map(|(&gv, &y)| gv * y).collect();
                push_grad!(x, dx);
            }
            Op::Ln { x, floor } => {
                let (x, floor) = (*x, *floor);
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[x])
                    .map(|(&gv, &xv)| if xv > floor { gv / xv } else { T::zero() })
                    .collect();
                push_grad!(x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.values[x])
                    .map(|(&gv, &xv)| if xv > lo && xv < hi { gv } else { T::zero() })
                    .collect();
                push_grad!(x, dx);
            }
            Op::Softmax { x } => {
                let x = *x;
                let n = self.shape(x)[1];
                let mut dx = vec![T::zero(); g.len()];
                for (row, (grow, yrow)) in
                    g.chunks(n).zip(self.values[id].chunks(n)).enumerate()
                {
                    let dot: T = grow
                        .iter()
                        .zip(yrow)
                        .fold(T::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                    for j in 0..n {
                        dx[row * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                push_grad!(x, dx);
            }
            Op::PickColumn { x, indices } => {
                let x = *x;
                let n = self.shape(x)[1];
                let mut dx = vec![T::zero(); self.values[x].len()];
                for (i, (&j, &gv)) in indices.iter().zip(g).enumerate() {
                    dx[i * n + j] += gv;
                }
                push_grad!(x, dx);
            }
            Op::SliceCols { x, start, end } => {
                let (x, start, end) = (*x, *start, *end);
                let n = self.shape(x)[1];
                let width = end - start;
                let mut dx = vec![T::zero(); self.values[x].len()];
                for (i, grow) in g.chunks(width).enumerate() {
                    dx[i * n + start..i * n + end].copy_from_slice(grow);
                }
                push_grad!(x, dx);
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (na, nb) = (self.shape(a)[1], self.shape(b)[1]);
                let rows = self.shape(a)[0];
                if self.nodes[a].needs_grad {
                    let mut da = vec![T::zero(); rows * na];
                    for i in 0..rows {
                        da[i * na..(i + 1) * na]
                            .copy_from_slice(&g[i * (na + nb)..i * (na + nb) + na]);
                    }
                    accumulate(&mut self.grads[a], &da);
                }
                if self.nodes[b].needs_grad {
                    let mut db = vec![T::zero(); rows * nb];
                    for i in 0..rows {
                        db[i * nb..(i + 1) * nb]
                            .copy_from_slice(&g[i * (na + nb) + na..(i + 1) * (na + nb)]);
                    }
                    accumulate(&mut self.grads[b], &db);
                }
            }
            Op::RowSum { x } => {
                let x = *x;
                let n = self.shape(x)[1];
                let mut dx = vec![T::zero(); self.values[x].len()];
                for (i, &gv) in g.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] = gv;
                    }
                }
                push_grad!(x, dx);
            }
            Op::SumAll { x } => {
                let x = *x;
                let dx = vec![g[0]; self.values[x].len()];
                push_grad!(x, dx);
            }
            Op::MeanAll { x } => {
                let x = *x;
                let n = T::from_f64(self.values[x].len() as f64);
                let dx = vec![g[0] / n; self.values[x].len()];
                push_grad!(x, dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                push_grad!(x, g.to_vec());
            }
            Op::Conv2d { x, k, stride, padding } => {
                let (x, k, stride, padding) = (*x, *k, *stride, *padding);
                let sx = self.shape(x).to_vec();
                let sk = self.shape(k).to_vec();
                let so = self.nodes[id].shape.clone();
                let mut dx = if self.nodes[x].needs_grad {
                    Some(vec![T::zero(); self.values[x].len()])
                } else {
                    None
                };
                let mut dk = if self.nodes[k].needs_grad {
                    Some(vec![T::zero(); self.values[k].len()])
                } else {
                    None
                };
                kernels::conv2d_backward(
                    &self.values[x],
                    &self.values[k],
                    g,
                    sx[0], sx[1], sx[2], sx[3],
                    sk[0], sk[2], sk[3],
                    stride, padding,
                    so[2], so[3],
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accumulate(&mut self.grads[x], &dx);
                }
                if let Some(dk) = dk {
                    accumulate(&mut self.grads[k], &dk);
                }
            }
            Op::ConvTranspose2d { x, k, stride, padding } => {
                let (x, k, stride, padding) = (*x, *k, *stride, *padding);
                let sx = self.shape(x).to_vec();
                let sk = self.shape(k).to_vec();
                let so = self.nodes[id].shape.clone();
                let mut dx = if self.nodes[x].needs_grad {
                    Some(vec![T::zero(); self.values[x].len()])
                } else {
                    None
                };
                let mut dk = if self.nodes[k].needs_grad {
                    Some(vec![T::zero(); self.values[k].len()])
                } else {
                    None
                };
                kernels::conv2d_transpose_backward(
                    &self.values[x],
                    &self.values[k],
                    g,
                    sx[0], sx[1], sx[2], sx[3],
                    sk[1], sk[2], sk[3],
                    stride, padding,
                    so[2], so[3],
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accumulate(&mut self.grads[x], &dx);
                }
                if let Some(dk) = dk {
                    accumulate(&mut self.grads[k], &dk);
                }
            }
            Op::BatchNorm { x, gamma, beta, state, .. } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let eps = state.borrow().eps;
                let view = NormView::for_shape(self.shape(x)).unwrap();
                let (xhat, var, mode) = match &self.saved[id] {
                    Saved::Norm { xhat, var, mode } => (xhat.clone(), var.clone(), *mode),
                    _ => unreachable!("batch_norm backward without saved stats"),
                };
                let gam = self.values[gamma].clone();
                if self.nodes[gamma].needs_grad || self.nodes[beta].needs_grad {
                    let mut dgamma = vec![T::zero(); view.channels];
                    let mut dbeta = vec![T::zero(); view.channels];
                    for o in 0..view.outer {
                        for c in 0..view.channels {
                            for i in 0..view.inner {
                                let j = view.idx(o, c, i);
                                dgamma[c] += g[j] * xhat[j];
                                dbeta[c] += g[j];
                            }
                        }
                    }
                    if self.nodes[gamma].needs_grad {
                        accumulate(&mut self.grads[gamma], &dgamma);
                    }
                    if self.nodes[beta].needs_grad {
                        accumulate(&mut self.grads[beta], &dbeta);
                    }
                }
                if self.nodes[x].needs_grad {
                    let mut dxhat = vec![T::zero(); g.len()];
                    for o in 0..view.outer {
                        for c in 0..view.channels {
                            for i in 0..view.inner {
                                let j = view.idx(o, c, i);
                                dxhat[j] = g[j] * gam[c];
                            }
                        }
                    }
                    let dx = match mode {
                        Mode::Train => {
                            kernels::batch_norm_backward_input(&xhat, &dxhat, view, &var, eps)
                        }
                        Mode::Eval => {
                            let mut dx = dxhat;
                            for c in 0..view.channels {
                                let inv = (var[c] + eps).sqrt().recip();
                                for o in 0..view.outer {
                                    for i in 0..view.inner {
                                        let j = view.idx(o, c, i);
                                        dx[j] *= inv;
                                    }
                                }
                            }
                            dx
                        }
                    };
                    accumulate(&mut self.grads[x], &dx);
                }
            }
            Op::CondBatchNorm { x, gamma, beta, state, classes, .. } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let classes = classes.clone();
                let eps = state.borrow().eps;
                let view = NormView::for_shape(self.shape(x)).unwrap();
                let (xhat, var, mode) = match &self.saved[id] {
                    Saved::Norm { xhat, var, mode } => (xhat.clone(), var.clone(), *mode),
                    _ => unreachable!("cond_batch_norm backward without saved stats"),
                };
                let c_n = view.channels;
                let gam = self.values[gamma].clone();
                if self.nodes[gamma].needs_grad || self.nodes[beta].needs_grad {
                    let mut dgamma = vec![T::zero(); self.values[gamma].len()];
                    let mut dbeta = vec![T::zero(); self.values[beta].len()];
                    for o in 0..view.outer {
                        let k = classes[o];
                        for c in 0..c_n {
                            for i in 0..view.inner {
                                let j = view.idx(o, c, i);
                                dgamma[k * c_n + c] += g[j] * xhat[j];
                                dbeta[k * c_n + c] += g[j];
                            }
                        }
                    }
                    if self.nodes[gamma].needs_grad {
                        accumulate(&mut self.grads[gamma], &dgamma);
                    }
                    if self.nodes[beta].needs_grad {
                        accumulate(&mut self.grads[beta], &dbeta);
                    }
                }
                if self.nodes[x].needs_grad {
                    let mut dxhat = vec![T::zero(); g.len()];
                    for o in 0..view.outer {
                        let k = classes[o];
                        for c in 0..c_n {
                            for i in 0..view.inner {
                                let j = view.idx(o, c, i);
                                dxhat[j] = g[j] * gam[k * c_n + c];
                            }
                        }
                    }
                    let dx = match mode {
                        Mode::Train => {
                            kernels::batch_norm_backward_input(&xhat, &dxhat, view, &var, eps)
                        }
                        Mode::Eval => {
                            let mut dx = dxhat;
                            for c in 0..c_n {
                                let inv = (var[c] + eps).sqrt().recip();
                                for o in 0..view.outer {
                                    for i in 0..view.inner {
                                        let j = view.idx(o, c, i);
                                        dx[j] *= inv;
                                    }
                                }
                            }
                            dx
                        }
                    };
                    accumulate(&mut self.grads[x], &dx);
                }
            }
            Op::SpectralNorm { w, .. } => {
                let w = *w;
                let (u, v, sigma) = match &self.saved[id] {
                    Saved::Spectral { u, v, sigma } => (u.clone(), v.clone(), *sigma),
                    _ => unreachable!("spectral_norm backward without saved state"),
                };
                if self.nodes[w].needs_grad {
                    let dw =
                        spectral::normalize_backward(g, &self.values[w], &u, &v, sigma);
                    accumulate(&mut self.grads[w], &dw);
                }
            }
        }
    }

    /// Gradient accumulated at a node during the last backward pass.
    pub fn grad_of(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id].as_deref()
    }

    /// Gradient of a named input (requires `input_with_grad`).
    pub fn input_grad(&self, name: &str) -> Option<&[T]> {
        self.input_ids.get(name).and_then(|&id| self.grads[id].as_deref())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T]) {
    match slot {
        Some(g) => {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += *di;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}
