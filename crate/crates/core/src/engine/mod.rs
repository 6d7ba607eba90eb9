//! Graph execution in float32 or integer-only int8.
//!
//! An [`Interpreter`] prepares per-layer constants once (shifted int8
//! weights, fixed-point multipliers, softmax tables) and can then be invoked
//! any number of times, from any number of threads.

mod kernels;
pub mod ops;
pub mod requant;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::format::{Activation, ModelGraph, Op, OpKind, TensorDecl, TensorId};
use crate::tensor::{quantize, DType, QuantParams, Tensor, TensorData, TensorError};

use kernels::{AddParams, QuantizedWeights, SoftmaxTable, Window};
use requant::Multiplier;

pub use kernels::activation_range;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("graph takes {expected} inputs, got {actual}")]
    InputCount { expected: usize, actual: usize },
    #[error("input tensor {tensor}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        tensor: TensorId,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("input tensor {tensor}: expected {expected:?}, got {actual:?}")]
    DTypeMismatch {
        tensor: TensorId,
        expected: DType,
        actual: DType,
    },
    #[error("input tensor {tensor}: quantization params {actual:?} differ from graph's {expected:?}")]
    QuantParamsMismatch {
        tensor: TensorId,
        expected: Option<QuantParams>,
        actual: Option<QuantParams>,
    },
    #[error("unsupported layer {layer} ({kind}) for {dtype:?} activations")]
    Unsupported { layer: usize, kind: OpKind, dtype: DType },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How int8 graphs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Integer-only kernels.
    #[default]
    Integer,
    /// Debug path: dequantize operands, run the float kernel, quantize the
    /// result. Float graphs are unaffected.
    FloatReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub kind: OpKind,
    pub output: TensorId,
    pub shape: Vec<usize>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExecutionTrace {
    /// One entry per executed layer, in execution order.
    pub layers: Vec<LayerTrace>,
    pub total: Duration,
}

impl ExecutionTrace {
    /// The trace with all timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerTrace {
                    elapsed: Duration::ZERO,
                    ..l.clone()
                })
                .collect(),
            total: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Plain,
    Weighted(QuantizedWeights),
    Add(AddParams),
    Relu6 { lo: i32, hi: i32 },
    Concat(Vec<Option<(i32, Multiplier)>>),
    Softmax(Box<SoftmaxTable>),
}

#[derive(Debug, Clone)]
pub struct Interpreter<'g> {
    graph: &'g ModelGraph,
    mode: ExecMode,
    prepared: Vec<Prepared>,
    /// Position in execution order after which each tensor can be dropped.
    last_use: Vec<usize>,
}

fn qp(decl: &TensorDecl) -> QuantParams {
    decl.qparams.expect("validated int8 tensor carries qparams")
}

fn prepare_layer(g: &ModelGraph, li: usize) -> Prepared {
    let layer = &g.layers[li];
    let x = g.tensor(layer.inputs[0]);
    if x.dtype != DType::I8 {
        return Prepared::Plain;
    }
    let out = g.tensor(layer.output);
    let oqp = qp(out);
    match layer.op {
        Op::Conv2d(a) | Op::DepthwiseConv2d(a) => Prepared::Weighted(prepare_weights(g, li, a.activation)),
        Op::FullyConnected { activation } => Prepared::Weighted(prepare_weights(g, li, activation)),
        Op::Add { activation } => {
            let a = qp(x);
            let b = qp(g.tensor(layer.inputs[1]));
            Prepared::Add(AddParams::new(
                (a.scale, a.zero_point),
                (b.scale, b.zero_point),
                (oqp.scale, oqp.zero_point),
                activation,
            ))
        }
        Op::Relu6 => {
            let (lo, hi) = activation_range(Activation::Relu6, oqp.scale, oqp.zero_point);
            Prepared::Relu6 { lo, hi }
        }
        Op::Concat { .. } => Prepared::Concat(
            layer
                .inputs
                .iter()
                .map(|&id| {
                    let iq = qp(g.tensor(id));
                    (iq != oqp).then(|| (iq.zero_point, Multiplier::from_real(iq.scale as f64 / oqp.scale as f64)))
                })
                .collect(),
        ),
        Op::Softmax => Prepared::Softmax(Box::new(SoftmaxTable::new(qp(x).scale, oqp.scale, oqp.zero_point))),
        Op::MaxPool(_) | Op::AvgPool(_) | Op::Reshape => Prepared::Plain,
    }
}

fn prepare_weights(g: &ModelGraph, li: usize, act: Activation) -> QuantizedWeights {
    let layer = &g.layers[li];
    let x = qp(g.tensor(layer.inputs[0]));
    let wdecl = g.tensor(layer.inputs[1]);
    let w = qp(wdecl);
    let out = qp(g.tensor(layer.output));
    let weights = match &wdecl.data {
        Some(TensorData::I8(v)) => kernels::shift_i8(v, w.zero_point),
        _ => unreachable!("validated int8 weights"),
    };
    let bias = match &g.tensor(layer.inputs[2]).data {
        Some(TensorData::I32(v)) => v.clone(),
        _ => unreachable!("validated int32 bias"),
    };
    let (act_min, act_max) = activation_range(act, out.scale, out.zero_point);
    QuantizedWeights {
        weights,
        bias,
        multiplier: Multiplier::from_real(x.scale as f64 * w.scale as f64 / out.scale as f64),
        in_zp: x.zero_point,
        out_zp: out.zero_point,
        act_min,
        act_max,
    }
}

impl<'g> Interpreter<'g> {
    pub fn new(graph: &'g ModelGraph) -> Self {
        Self::with_mode(graph, ExecMode::Integer)
    }

    pub fn with_mode(graph: &'g ModelGraph, mode: ExecMode) -> Self {
        let prepared = (0..graph.layers.len()).map(|li| prepare_layer(graph, li)).collect();
        let mut last_use = vec![0usize; graph.tensors.len()];
        for (pos, (_, layer)) in graph.ordered_layers().enumerate() {
            for id in &layer.inputs {
                last_use[id.index()] = pos;
            }
        }
        for id in &graph.outputs {
            last_use[id.index()] = usize::MAX;
        }
        Self {
            graph,
            mode,
            prepared,
            last_use,
        }
    }

    pub fn graph(&self) -> &'g ModelGraph {
        self.graph
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn invoke(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, ExecutionTrace), ExecError> {
        self.invoke_observed(inputs, &mut |_, _| {})
    }

    /// Runs the graph, handing every graph input and every produced tensor
    /// to `observe` as soon as it exists.
    pub fn invoke_observed(
        &self,
        inputs: &[Tensor],
        observe: &mut dyn FnMut(TensorId, &Tensor),
    ) -> Result<(Vec<Tensor>, ExecutionTrace), ExecError> {
        let g = self.graph;
        self.check_inputs(inputs)?;
        let start = Instant::now();
        let mut values: Vec<Option<Tensor>> = vec![None; g.tensors.len()];
        for (&id, t) in g.inputs.iter().zip(inputs) {
            observe(id, t);
            values[id.index()] = Some(t.clone());
        }
        let mut trace = ExecutionTrace::default();
        for (pos, (li, layer)) in g.ordered_layers().enumerate() {
            let t0 = Instant::now();
            let out = {
                let operands: Vec<&Tensor> = layer
                    .inputs
                    .iter()
                    .filter(|id| !g.tensor(**id).is_constant())
                    .map(|id| values[id.index()].as_ref().expect("operand computed earlier"))
                    .collect();
                self.exec_layer(li, &operands)?
            };
            let elapsed = t0.elapsed();
            observe(layer.output, &out);
            trace.layers.push(LayerTrace {
                layer: li,
                kind: layer.op.kind(),
                output: layer.output,
                shape: out.shape().to_vec(),
                elapsed,
            });
            values[layer.output.index()] = Some(out);
            for id in &layer.inputs {
                if self.last_use[id.index()] == pos {
                    values[id.index()] = None;
                }
            }
        }
        let outputs = g
            .outputs
            .iter()
            .map(|id| values[id.index()].clone().expect("graph output computed"))
            .collect();
        trace.total = start.elapsed();
        Ok((outputs, trace))
    }

    fn check_inputs(&self, inputs: &[Tensor]) -> Result<(), ExecError> {
        let g = self.graph;
        if inputs.len() != g.inputs.len() {
            return Err(ExecError::InputCount {
                expected: g.inputs.len(),
                actual: inputs.len(),
            });
        }
        for (&id, t) in g.inputs.iter().zip(inputs) {
            let d = g.tensor(id);
            if t.dtype() != d.dtype {
                return Err(ExecError::DTypeMismatch {
                    tensor: id,
                    expected: d.dtype,
                    actual: t.dtype(),
                });
            }
            if t.shape() != d.shape.as_slice() {
                return Err(ExecError::ShapeMismatch {
                    tensor: id,
                    expected: d.shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
            if d.dtype == DType::I8 && t.qparams() != d.qparams {
                return Err(ExecError::QuantParamsMismatch {
                    tensor: id,
                    expected: d.qparams,
                    actual: t.qparams(),
                });
            }
        }
        Ok(())
    }

    fn exec_layer(&self, li: usize, operands: &[&Tensor]) -> Result<Tensor, ExecError> {
        let g = self.graph;
        let layer = &g.layers[li];
        let out_decl = g.tensor(layer.output);
        let x = operands[0];
        match x.dtype() {
            DType::F32 => {
                let data = exec_f32(g, li, operands);
                Ok(Tensor::from_f32(out_decl.shape.clone(), data)?)
            }
            DType::I8 if self.mode == ExecMode::FloatReference => {
                let real: Vec<Tensor> = operands
                    .iter()
                    .map(|t| Tensor::from_f32(t.shape().to_vec(), t.to_f32_vec()))
                    .collect::<Result<_, _>>()?;
                let refs: Vec<&Tensor> = real.iter().collect();
                let data = exec_f32(g, li, &refs);
                let y = Tensor::from_f32(out_decl.shape.clone(), data)?;
                Ok(quantize(&y, qp(out_decl))?)
            }
            DType::I8 => {
                let data = self.exec_i8(li, operands);
                Ok(Tensor::from_i8(out_decl.shape.clone(), data, qp(out_decl))?)
            }
            DType::I32 => Err(ExecError::Unsupported {
                layer: li,
                kind: layer.op.kind(),
                dtype: DType::I32,
            }),
        }
    }

    fn exec_i8(&self, li: usize, operands: &[&Tensor]) -> Vec<i8> {
        let g = self.graph;
        let layer = &g.layers[li];
        let x = operands[0];
        let xs = x.as_i8().expect("int8 operand");
        let hwc = || {
            let s = x.shape();
            (s[1], s[2], s[3])
        };
        match (&layer.op, &self.prepared[li]) {
            (Op::Conv2d(a), Prepared::Weighted(q)) => {
                let out_c = g.tensor(layer.inputs[1]).shape[0];
                kernels::conv2d_i8(xs, &Window::conv(hwc(), a).unwrap(), q, out_c)
            }
            (Op::DepthwiseConv2d(a), Prepared::Weighted(q)) => {
                kernels::depthwise_i8(xs, &Window::conv(hwc(), a).unwrap(), q)
            }
            (Op::FullyConnected { .. }, Prepared::Weighted(q)) => kernels::fully_connected_i8(xs, q),
            (Op::MaxPool(p), _) => kernels::max_pool_i8(xs, &Window::pool(hwc(), p).unwrap()),
            (Op::AvgPool(p), _) => kernels::avg_pool_i8(xs, &Window::pool(hwc(), p).unwrap()),
            (Op::Relu6, Prepared::Relu6 { lo, hi }) => kernels::relu6_i8(xs, *lo, *hi),
            (Op::Softmax, Prepared::Softmax(t)) => kernels::softmax_i8(xs, *x.shape().last().unwrap(), t),
            (Op::Add { .. }, Prepared::Add(p)) => kernels::add_i8(xs, operands[1].as_i8().expect("int8 operand"), p),
            (Op::Concat { axis }, Prepared::Concat(rescale)) => {
                let rescaled: Vec<Vec<i8>> = operands
                    .iter()
                    .zip(rescale)
                    .map(|(t, r)| {
                        let d = t.as_i8().expect("int8 operand");
                        match r {
                            Some((zp_in, m)) => {
                                kernels::rescale_i8(d, *zp_in, *m, qp(g.tensor(layer.output)).zero_point)
                            }
                            None => d.to_vec(),
                        }
                    })
                    .collect();
                let parts: Vec<(&[i8], &[usize])> = rescaled
                    .iter()
                    .zip(operands)
                    .map(|(d, t)| (d.as_slice(), t.shape()))
                    .collect();
                kernels::concat(&parts, *axis)
            }
            (Op::Reshape, _) => xs.to_vec(),
            (op, _) => unreachable!("no int8 preparation for {:?}", op.kind()),
        }
    }
}

/// Float execution of one layer on real-valued operands. Constants are read
/// from the graph and dequantized when the graph is int8.
fn exec_f32(g: &ModelGraph, li: usize, operands: &[&Tensor]) -> Vec<f32> {
    let layer = &g.layers[li];
    let x = operands[0];
    let xs = x.as_f32().expect("float operand");
    let hwc = || {
        let s = x.shape();
        (s[1], s[2], s[3])
    };
    let constant = |slot: usize| -> Vec<f32> {
        let d = g.tensor(layer.inputs[slot]);
        d.constant_tensor().expect("validated constant").to_f32_vec()
    };
    match &layer.op {
        Op::Conv2d(a) => {
            let out_c = g.tensor(layer.inputs[1]).shape[0];
            kernels::conv2d_f32(
                xs,
                &Window::conv(hwc(), a).unwrap(),
                &constant(1),
                &constant(2),
                out_c,
                a.activation,
            )
        }
        Op::DepthwiseConv2d(a) => kernels::depthwise_f32(
            xs,
            &Window::conv(hwc(), a).unwrap(),
            &constant(1),
            &constant(2),
            a.activation,
        ),
        Op::FullyConnected { activation } => kernels::fully_connected_f32(xs, &constant(1), &constant(2), *activation),
        Op::MaxPool(p) => kernels::max_pool_f32(xs, &Window::pool(hwc(), p).unwrap()),
        Op::AvgPool(p) => kernels::avg_pool_f32(xs, &Window::pool(hwc(), p).unwrap()),
        Op::Relu6 => xs.iter().map(|&v| kernels::relu6_f32(v)).collect(),
        Op::Softmax => kernels::softmax_f32(xs, *x.shape().last().unwrap()),
        Op::Add { activation } => kernels::add_f32(xs, operands[1].as_f32().expect("float operand"), *activation),
        Op::Concat { axis } => {
            let parts: Vec<(&[f32], &[usize])> = operands
                .iter()
                .map(|t| (t.as_f32().expect("float operand"), t.shape()))
                .collect();
            kernels::concat(&parts, *axis)
        }
        Op::Reshape => xs.to_vec(),
    }
}

/// Runs a single-input graph once with integer kernels.
pub fn run(g: &ModelGraph, input: &Tensor) -> Result<(Vec<Tensor>, ExecutionTrace), ExecError> {
    Interpreter::new(g).invoke(std::slice::from_ref(input))
}

/// Converts a real-valued image (`[H,W,C]` or `[1,H,W,C]`) into what the
/// graph's first input expects, quantizing with the input's params when the
/// graph is int8.
pub fn prepare_input(g: &ModelGraph, image: &Tensor) -> Result<Tensor, ExecError> {
    let id = *g
        .inputs
        .first()
        .ok_or(ExecError::InputCount { expected: 0, actual: 1 })?;
    let decl = g.tensor(id);
    let mut t = image.clone();
    if t.shape() != decl.shape.as_slice() && t.len() == decl.num_elements() && t.shape().len() + 1 == decl.shape.len() {
        t = t.reshaped(decl.shape.clone())?;
    }
    if t.shape() != decl.shape.as_slice() {
        return Err(ExecError::ShapeMismatch {
            tensor: id,
            expected: decl.shape.clone(),
            actual: image.shape().to_vec(),
        });
    }
    match decl.dtype {
        DType::I8 if t.dtype() == DType::F32 => Ok(quantize(&t, qp(decl))?),
        _ => Ok(t),
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(t: &Tensor) -> Option<usize> {
    let v = t.to_f32_vec();
    let mut best: Option<(usize, f32)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ if x.is_nan() => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
