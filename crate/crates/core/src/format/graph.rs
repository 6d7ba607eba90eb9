use std::fmt;

use crate::tensor::{num_elements, DType, QuantParams, Tensor, TensorData};

use super::GraphError;

/// Largest element count accepted for any declared tensor.
pub const MAX_ELEMENTS: usize = 1 << 30;
/// Largest accepted extent on a single axis.
pub const MAX_EXTENT: usize = 1 << 24;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub u32);

impl TensorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDecl {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub qparams: Option<QuantParams>,
    /// Constant payload (weights, biases). `None` for activations.
    pub data: Option<TensorData>,
}

impl TensorDecl {
    pub fn activation(shape: Vec<usize>, dtype: DType, qparams: Option<QuantParams>) -> Self {
        Self {
            shape,
            dtype,
            qparams,
            data: None,
        }
    }

    pub fn constant(t: Tensor) -> Self {
        let (shape, data, qparams) = t.into_parts();
        Self {
            shape,
            dtype: data.dtype(),
            qparams,
            data: Some(data),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.data.is_some()
    }

    pub fn num_elements(&self) -> usize {
        num_elements(&self.shape)
    }

    pub fn size_bytes(&self) -> usize {
        self.num_elements() * self.dtype.width()
    }

    /// The constant payload as a tensor.
    pub fn constant_tensor(&self) -> Option<Tensor> {
        let data = self.data.clone()?;
        Tensor::new(self.shape.clone(), data, self.qparams).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvAttrs {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvAttrs {
    pub fn new(kernel: usize, stride: usize, padding: Padding, activation: Activation) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            padding,
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolAttrs {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
}

impl PoolAttrs {
    pub fn new(kernel: usize, stride: usize, padding: Padding) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            padding,
        }
    }
}

/// Layer operator with its kind-specific attributes.
///
/// Weight layouts: conv2d `(out_c, kh, kw, in_c)`, depthwise `(1, kh, kw, c)`,
/// fully connected `(out, in)`. Bias is one value per output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Conv2d(ConvAttrs),
    DepthwiseConv2d(ConvAttrs),
    FullyConnected { activation: Activation },
    MaxPool(PoolAttrs),
    AvgPool(PoolAttrs),
    Relu6,
    Softmax,
    Add { activation: Activation },
    Concat { axis: usize },
    Reshape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    DepthwiseConv2d,
    FullyConnected,
    MaxPool,
    AvgPool,
    Relu6,
    Softmax,
    Add,
    Concat,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::FullyConnected,
        OpKind::MaxPool,
        OpKind::AvgPool,
        OpKind::Relu6,
        OpKind::Softmax,
        OpKind::Add,
        OpKind::Concat,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::DepthwiseConv2d => "depthwise_conv2d",
            OpKind::FullyConnected => "fully_connected",
            OpKind::MaxPool => "max_pool",
            OpKind::AvgPool => "avg_pool",
            OpKind::Relu6 => "relu6",
            OpKind::Softmax => "softmax",
            OpKind::Add => "add",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::DepthwiseConv2d(_) => OpKind::DepthwiseConv2d,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::MaxPool(_) => OpKind::MaxPool,
            Op::AvgPool(_) => OpKind::AvgPool,
            Op::Relu6 => OpKind::Relu6,
            Op::Softmax => OpKind::Softmax,
            Op::Add { .. } => OpKind::Add,
            Op::Concat { .. } => OpKind::Concat,
            Op::Reshape => OpKind::Reshape,
        }
    }

    /// Ops whose int8 output must share the input's quantization params.
    pub fn is_qparam_passthrough(&self) -> bool {
        matches!(self, Op::MaxPool(_) | Op::AvgPool(_) | Op::Relu6 | Op::Reshape)
    }

    /// Ops taking `(input, weights, bias)` where weights and bias are constants.
    pub fn has_weights(&self) -> bool {
        matches!(self, Op::Conv2d(_) | Op::DepthwiseConv2d(_) | Op::FullyConnected { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: Op,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub version: u32,
    pub tensors: Vec<TensorDecl>,
    pub layers: Vec<Layer>,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    /// Execution order (indices into `layers`); filled by validation.
    order: Vec<usize>,
}

impl ModelGraph {
    /// Assembles and validates a graph.
    pub fn new(
        tensors: Vec<TensorDecl>,
        layers: Vec<Layer>,
        inputs: Vec<TensorId>,
        outputs: Vec<TensorId>,
    ) -> Result<Self, GraphError> {
        let mut g = Self {
            version: super::FORMAT_VERSION,
            tensors,
            layers,
            inputs,
            outputs,
            order: Vec::new(),
        };
        g.order = validate(&g)?;
        Ok(g)
    }

    /// Topological execution order over `layers`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn ordered_layers(&self) -> impl Iterator<Item = (usize, &Layer)> {
        self.order.iter().map(move |&i| (i, &self.layers[i]))
    }

    pub fn tensor(&self, id: TensorId) -> &TensorDecl {
        &self.tensors[id.index()]
    }

    /// Total element count of all constants.
    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.is_constant())
            .map(|t| t.num_elements())
            .sum()
    }

    /// Element type of the first graph input, if any.
    pub fn input_dtype(&self) -> Option<DType> {
        self.inputs.first().map(|&id| self.tensor(id).dtype)
    }

    pub fn is_quantized(&self) -> bool {
        self.tensors.iter().any(|t| t.dtype == DType::I8)
    }
}

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some((input - kernel) / stride + 1)
            }
        }
    }
}

/// Leading (low-side) padding for one spatial axis. The odd extra pixel,
/// if any, goes on the high side.
pub(crate) fn pad_before(input: usize, output: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let needed = (output - 1) * stride + kernel;
            needed.saturating_sub(input) / 2
        }
    }
}

fn shape_err(layer: usize, msg: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch {
        layer,
        message: msg.into(),
    }
}

/// Output shape of a layer given its input declarations.
pub fn infer_output_shape(
    layer_index: usize,
    op: &Op,
    inputs: &[&TensorDecl],
    declared_output: Option<&[usize]>,
) -> Result<Vec<usize>, GraphError> {
    let l = layer_index;
    let arity_ok = match op {
        Op::Conv2d(_) | Op::DepthwiseConv2d(_) | Op::FullyConnected { .. } => inputs.len() == 3,
        Op::Add { .. } => inputs.len() == 2,
        Op::Concat { .. } => inputs.len() >= 2,
        _ => inputs.len() == 1,
    };
    if !arity_ok {
        return Err(GraphError::Arity {
            layer: l,
            kind: op.kind(),
            count: inputs.len(),
        });
    }
    let x = &inputs[0].shape;
    let image = |what: &str| -> Result<(usize, usize, usize), GraphError> {
        if x.len() != 4 || x[0] != 1 {
            return Err(shape_err(l, format!("{what} expects a [1,H,W,C] input, got {x:?}")));
        }
        Ok((x[1], x[2], x[3]))
    };
    match op {
        Op::Conv2d(a) | Op::DepthwiseConv2d(a) => {
            let (h, w, c) = image(op.kind().name())?;
            let wt = &inputs[1].shape;
            let depthwise = matches!(op, Op::DepthwiseConv2d(_));
            let out_c = if depthwise {
                if wt.as_slice() != [1, a.kernel_h, a.kernel_w, c] {
                    return Err(shape_err(
                        l,
                        format!(
                            "depthwise weights {wt:?} do not match [1,{},{},{c}]",
                            a.kernel_h, a.kernel_w
                        ),
                    ));
                }
                c
            } else {
                if wt.len() != 4 || wt[1] != a.kernel_h || wt[2] != a.kernel_w || wt[3] != c {
                    return Err(shape_err(
                        l,
                        format!("conv weights {wt:?} do not match [O,{},{},{c}]", a.kernel_h, a.kernel_w),
                    ));
                }
                wt[0]
            };
            if inputs[2].shape.as_slice() != [out_c] {
                return Err(shape_err(l, format!("bias {:?} expected [{out_c}]", inputs[2].shape)));
            }
            let oh = conv_out_extent(h, a.kernel_h, a.stride_h, a.padding)
                .ok_or_else(|| shape_err(l, "kernel taller than input under valid padding"))?;
            let ow = conv_out_extent(w, a.kernel_w, a.stride_w, a.padding)
                .ok_or_else(|| shape_err(l, "kernel wider than input under valid padding"))?;
            Ok(vec![1, oh, ow, out_c])
        }
        Op::FullyConnected { .. } => {
            if x.first() != Some(&1) {
                return Err(shape_err(l, "fully_connected expects batch 1"));
            }
            let k = num_elements(x);
            let wt = &inputs[1].shape;
            if wt.len() != 2 || wt[1] != k {
                return Err(shape_err(l, format!("fc weights {wt:?} expected [O,{k}]")));
            }
            if inputs[2].shape.as_slice() != [wt[0]] {
                return Err(shape_err(l, format!("bias {:?} expected [{}]", inputs[2].shape, wt[0])));
            }
            Ok(vec![1, wt[0]])
        }
        Op::MaxPool(p) | Op::AvgPool(p) => {
            let (h, w, c) = image(op.kind().name())?;
            let oh = conv_out_extent(h, p.kernel_h, p.stride_h, p.padding)
                .ok_or_else(|| shape_err(l, "pool window taller than input"))?;
            let ow = conv_out_extent(w, p.kernel_w, p.stride_w, p.padding)
                .ok_or_else(|| shape_err(l, "pool window wider than input"))?;
            Ok(vec![1, oh, ow, c])
        }
        Op::Relu6 | Op::Softmax => Ok(x.clone()),
        Op::Add { .. } => {
            if inputs[1].shape != *x {
                return Err(shape_err(l, format!("add operands {x:?} vs {:?}", inputs[1].shape)));
            }
            Ok(x.clone())
        }
        Op::Concat { axis } => {
            if *axis >= x.len() {
                return Err(shape_err(l, format!("concat axis {axis} out of rank {}", x.len())));
            }
            let mut out = x.clone();
            for t in &inputs[1..] {
                let s = &t.shape;
                let compatible =
                    s.len() == x.len() && s.iter().zip(x).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !compatible {
                    return Err(shape_err(l, format!("concat operand {s:?} incompatible with {x:?}")));
                }
                out[*axis] = out[*axis].saturating_add(s[*axis]);
            }
            Ok(out)
        }
        Op::Reshape => {
            let target = declared_output.ok_or_else(|| shape_err(l, "reshape needs a declared output shape"))?;
            if num_elements(target) != num_elements(x) {
                return Err(shape_err(
                    l,
                    format!("reshape {x:?} -> {target:?} changes element count"),
                ));
            }
            Ok(target.to_vec())
        }
    }
}

fn check_decl(id: usize, t: &TensorDecl) -> Result<(), GraphError> {
    let bad = |reason: String| GraphError::InvalidTensor { id: id as u32, reason };
    if t.shape.len() > MAX_RANK {
        return Err(bad(format!("rank {} exceeds {MAX_RANK}", t.shape.len())));
    }
    let mut n: usize = 1;
    for &d in &t.shape {
        if d == 0 || d > MAX_EXTENT {
            return Err(bad(format!("extent {d} out of range")));
        }
        n = n
            .checked_mul(d)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| bad("too many elements".to_string()))?;
    }
    match (t.dtype, t.qparams) {
        (DType::I8, None) => return Err(bad("int8 tensor without quantization params".into())),
        (DType::F32, Some(_)) => return Err(bad("float32 tensor with quantization params".into())),
        (DType::I32, Some(qp)) if qp.zero_point != 0 => return Err(bad("int32 tensor needs zero point 0".into())),
        _ => {}
    }
    if let Some(qp) = t.qparams {
        if QuantParams::new(qp.scale, qp.zero_point).is_err() {
            return Err(bad(format!("bad quantization params {qp:?}")));
        }
    }
    if let Some(data) = &t.data {
        if data.dtype() != t.dtype || data.len() != n {
            return Err(bad("constant payload does not match declaration".into()));
        }
    }
    Ok(())
}

/// Checks every graph invariant and returns a topological layer order.
///
/// The order is Kahn's algorithm, always releasing the lowest ready layer
/// index first, so a graph stored in dependency order executes as stored.
pub fn validate(g: &ModelGraph) -> Result<Vec<usize>, GraphError> {
    for (i, t) in g.tensors.iter().enumerate() {
        check_decl(i, t)?;
    }
    let n_t = g.tensors.len();
    let exists = |id: TensorId| id.index() < n_t;
    for &id in g.inputs.iter().chain(&g.outputs) {
        if !exists(id) {
            return Err(GraphError::DanglingTensor { id: id.0, layer: None });
        }
    }
    for &id in &g.inputs {
        if g.tensor(id).is_constant() {
            return Err(GraphError::InvalidTensor {
                id: id.0,
                reason: "graph input cannot be a constant".into(),
            });
        }
    }
    let mut producer: Vec<Option<usize>> = vec![None; n_t];
    for (li, layer) in g.layers.iter().enumerate() {
        if layer.inputs.len() > u8::MAX as usize {
            return Err(GraphError::Arity {
                layer: li,
                kind: layer.op.kind(),
                count: layer.inputs.len(),
            });
        }
        for &id in layer.inputs.iter().chain(std::iter::once(&layer.output)) {
            if !exists(id) {
                return Err(GraphError::DanglingTensor {
                    id: id.0,
                    layer: Some(li),
                });
            }
        }
        let out = layer.output;
        if g.tensor(out).is_constant() || g.inputs.contains(&out) {
            return Err(GraphError::MultipleProducers { id: out.0, layer: li });
        }
        if producer[out.index()].replace(li).is_some() {
            return Err(GraphError::MultipleProducers { id: out.0, layer: li });
        }
    }
    for (i, t) in g.tensors.iter().enumerate() {
        let id = TensorId(i as u32);
        if !t.is_constant() && producer[i].is_none() && !g.inputs.contains(&id) {
            return Err(GraphError::NoProducer { id: id.0 });
        }
    }

    // Kahn's algorithm over layer dependencies.
    let n_l = g.layers.len();
    let mut indegree = vec![0usize; n_l];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n_l];
    for (li, layer) in g.layers.iter().enumerate() {
        for &id in &layer.inputs {
            if let Some(p) = producer[id.index()] {
                indegree[li] += 1;
                consumers[p].push(li);
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n_l).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n_l);
    while let Some(li) = ready.pop_first() {
        order.push(li);
        for &c in &consumers[li] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n_l {
        let stuck = (0..n_l).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(GraphError::Cycle { layer: stuck });
    }

    for &li in &order {
        check_layer(g, li)?;
    }
    Ok(order)
}

fn check_layer(g: &ModelGraph, li: usize) -> Result<(), GraphError> {
    let layer = &g.layers[li];
    let ins: Vec<&TensorDecl> = layer.inputs.iter().map(|&id| g.tensor(id)).collect();
    let out = g.tensor(layer.output);
    check_attrs(li, &layer.op)?;
    let inferred = infer_output_shape(li, &layer.op, &ins, Some(&out.shape))?;
    if inferred != out.shape {
        return Err(shape_err(
            li,
            format!("declared output {:?} but inferred {inferred:?}", out.shape),
        ));
    }
    let bad = |reason: String| GraphError::InvalidLayer { layer: li, reason };
    // Weights and biases are constants; everything else flows at runtime.
    for (slot, t) in ins.iter().enumerate() {
        let should_be_const = layer.op.has_weights() && slot > 0;
        if t.is_constant() != should_be_const {
            return Err(bad(format!(
                "operand {slot} must {}be a constant",
                if should_be_const { "" } else { "not " }
            )));
        }
    }
    let act = ins[0].dtype;
    if act == DType::I32 {
        return Err(bad("int32 activations are not supported".into()));
    }
    if out.dtype != act {
        return Err(bad(format!(
            "output dtype {:?} differs from input {:?}",
            out.dtype, act
        )));
    }
    let operands = if layer.op.has_weights() { &ins[..1] } else { &ins[..] };
    if operands.iter().any(|t| t.dtype != act) {
        return Err(bad("mixed activation dtypes".into()));
    }
    if layer.op.has_weights() {
        let (w, b) = (ins[1], ins[2]);
        let bias_dtype = if act == DType::I8 { DType::I32 } else { DType::F32 };
        if w.dtype != act || b.dtype != bias_dtype {
            return Err(bad(format!(
                "weights/bias dtypes {:?}/{:?} do not fit {:?} activations",
                w.dtype, b.dtype, act
            )));
        }
        if act == DType::I8 {
            let expect = ins[0].qparams.unwrap().scale as f64 * w.qparams.unwrap().scale as f64;
            let got = b.qparams.map(|q| q.scale as f64);
            match got {
                Some(s) if ((s - expect) / expect).abs() <= 1e-5 => {}
                _ => return Err(bad("int32 bias scale must equal input_scale * weight_scale".into())),
            }
        }
    }
    if act == DType::I8 && layer.op.is_qparam_passthrough() && out.qparams != ins[0].qparams {
        return Err(bad(format!(
            "{} must keep its input quantization params",
            layer.op.kind()
        )));
    }
    Ok(())
}

fn check_attrs(li: usize, op: &Op) -> Result<(), GraphError> {
    let bad = |reason: &str| GraphError::InvalidLayer {
        layer: li,
        reason: reason.to_string(),
    };
    let dims = |kh: usize, kw: usize, sh: usize, sw: usize| {
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            Err(bad("kernel and stride extents must be >= 1"))
        } else if kh > MAX_EXTENT || kw > MAX_EXTENT || sh > MAX_EXTENT || sw > MAX_EXTENT {
            Err(bad("kernel or stride extent too large"))
        } else {
            Ok(())
        }
    };
    match op {
        Op::Conv2d(a) | Op::DepthwiseConv2d(a) => dims(a.kernel_h, a.kernel_w, a.stride_h, a.stride_w),
        Op::MaxPool(p) | Op::AvgPool(p) => dims(p.kernel_h, p.kernel_w, p.stride_h, p.stride_w),
        _ => Ok(()),
    }
}
