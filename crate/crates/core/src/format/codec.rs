//! Byte-level `.rglm` reader and writer.
//!
//! ```text
//! header (28 bytes)
//!   0  magic      "RGLM"
//!   4  version    u32
//!   8  n_tensors  u32
//!   12 n_layers   u32
//!   16 n_inputs   u32
//!   20 n_outputs  u32
//!   24 blob_len   u32   total constant payload bytes
//! input ids       u32 * n_inputs
//! output ids      u32 * n_outputs
//! tensor records  (id = position in table)
//!   dtype u8 (0 f32, 1 i8, 2 i32) | rank u8 | dims u32 * rank
//!   flags u8 (bit0 quantized, bit1 constant)
//!   [scale f32 | zero_point i32]  when bit0 set
//! layer records
//!   kind u8 | n_attrs u8 | (key u8, value u32) * n_attrs, keys ascending
//!   n_inputs u8 | input ids u32 * n | output id u32
//! constant blob   payloads of constant tensors in table order, no padding
//! ```
//!
//! Everything is little-endian. The encoding is canonical: a stream parses
//! only if re-serializing the graph reproduces it byte for byte.

use crate::tensor::{DType, QuantParams, TensorData};

use super::graph::{
    Activation, ConvAttrs, Layer, ModelGraph, Op, OpKind, Padding, PoolAttrs, TensorDecl, TensorId, MAX_ELEMENTS,
};
use super::{FormatError, GraphError, FORMAT_VERSION, MAGIC};

/// Size of the fixed header; also the size of a graph with no tensors.
pub const HEADER_SIZE: usize = 28;

const FLAG_QUANTIZED: u8 = 1;
const FLAG_CONSTANT: u8 = 2;

const KEY_KERNEL_H: u8 = 1;
const KEY_KERNEL_W: u8 = 2;
const KEY_STRIDE_H: u8 = 3;
const KEY_STRIDE_W: u8 = 4;
const KEY_PADDING: u8 = 5;
const KEY_ACTIVATION: u8 = 6;
const KEY_AXIS: u8 = 7;

fn kind_code(kind: OpKind) -> u8 {
    match kind {
        OpKind::Conv2d => 0,
        OpKind::DepthwiseConv2d => 1,
        OpKind::FullyConnected => 2,
        OpKind::MaxPool => 3,
        OpKind::AvgPool => 4,
        OpKind::Relu6 => 5,
        OpKind::Softmax => 6,
        OpKind::Add => 7,
        OpKind::Concat => 8,
        OpKind::Reshape => 9,
    }
}

fn kind_from_code(code: u8) -> Option<OpKind> {
    OpKind::ALL.get(code as usize).copied()
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::I8 => 1,
        DType::I32 => 2,
    }
}

fn required_keys(kind: OpKind) -> &'static [u8] {
    const CONV: &[u8] = &[
        KEY_KERNEL_H,
        KEY_KERNEL_W,
        KEY_STRIDE_H,
        KEY_STRIDE_W,
        KEY_PADDING,
        KEY_ACTIVATION,
    ];
    const POOL: &[u8] = &[KEY_KERNEL_H, KEY_KERNEL_W, KEY_STRIDE_H, KEY_STRIDE_W, KEY_PADDING];
    match kind {
        OpKind::Conv2d | OpKind::DepthwiseConv2d => CONV,
        OpKind::MaxPool | OpKind::AvgPool => POOL,
        OpKind::FullyConnected | OpKind::Add => &[KEY_ACTIVATION],
        OpKind::Concat => &[KEY_AXIS],
        OpKind::Relu6 | OpKind::Softmax | OpKind::Reshape => &[],
    }
}

fn padding_code(p: Padding) -> u32 {
    match p {
        Padding::Same => 0,
        Padding::Valid => 1,
    }
}

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::None => 0,
        Activation::Relu6 => 1,
    }
}

fn op_attrs(op: &Op) -> Vec<(u8, u32)> {
    let conv = |a: &ConvAttrs| {
        vec![
            (KEY_KERNEL_H, a.kernel_h as u32),
            (KEY_KERNEL_W, a.kernel_w as u32),
            (KEY_STRIDE_H, a.stride_h as u32),
            (KEY_STRIDE_W, a.stride_w as u32),
            (KEY_PADDING, padding_code(a.padding)),
            (KEY_ACTIVATION, activation_code(a.activation)),
        ]
    };
    let pool = |p: &PoolAttrs| {
        vec![
            (KEY_KERNEL_H, p.kernel_h as u32),
            (KEY_KERNEL_W, p.kernel_w as u32),
            (KEY_STRIDE_H, p.stride_h as u32),
            (KEY_STRIDE_W, p.stride_w as u32),
            (KEY_PADDING, padding_code(p.padding)),
        ]
    };
    match op {
        Op::Conv2d(a) | Op::DepthwiseConv2d(a) => conv(a),
        Op::MaxPool(p) | Op::AvgPool(p) => pool(p),
        Op::FullyConnected { activation } | Op::Add { activation } => {
            vec![(KEY_ACTIVATION, activation_code(*activation))]
        }
        Op::Concat { axis } => vec![(KEY_AXIS, *axis as u32)],
        Op::Relu6 | Op::Softmax | Op::Reshape => vec![],
    }
}

/// Deterministic encoding of a valid graph.
pub fn serialize_model(g: &ModelGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_size(g));
    let blob_len: usize = g
        .tensors
        .iter()
        .filter(|t| t.is_constant())
        .map(|t| t.size_bytes())
        .sum();
    out.extend_from_slice(&MAGIC);
    for v in [
        g.version,
        g.tensors.len() as u32,
        g.layers.len() as u32,
        g.inputs.len() as u32,
        g.outputs.len() as u32,
        blob_len as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in g.inputs.iter().chain(&g.outputs) {
        out.extend_from_slice(&id.0.to_le_bytes());
    }
    for t in &g.tensors {
        out.push(dtype_code(t.dtype));
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut flags = 0;
        if t.qparams.is_some() {
            flags |= FLAG_QUANTIZED;
        }
        if t.is_constant() {
            flags |= FLAG_CONSTANT;
        }
        out.push(flags);
        if let Some(qp) = t.qparams {
            out.extend_from_slice(&qp.scale.to_le_bytes());
            out.extend_from_slice(&qp.zero_point.to_le_bytes());
        }
    }
    for layer in &g.layers {
        out.push(kind_code(layer.op.kind()));
        let attrs = op_attrs(&layer.op);
        out.push(attrs.len() as u8);
        for (k, v) in attrs {
            out.push(k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(layer.inputs.len() as u8);
        for id in &layer.inputs {
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        out.extend_from_slice(&layer.output.0.to_le_bytes());
    }
    for t in &g.tensors {
        match &t.data {
            Some(TensorData::F32(v)) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Some(TensorData::I8(v)) => out.extend(v.iter().map(|&x| x as u8)),
            Some(TensorData::I32(v)) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            None => {}
        }
    }
    out
}

fn serialized_size(g: &ModelGraph) -> usize {
    let ids = 4 * (g.inputs.len() + g.outputs.len());
    let tensors: usize = g
        .tensors
        .iter()
        .map(|t| {
            3 + 4 * t.shape.len()
                + if t.qparams.is_some() { 8 } else { 0 }
                + if t.is_constant() { t.size_bytes() } else { 0 }
        })
        .sum();
    let layers: usize = g
        .layers
        .iter()
        .map(|l| 3 + 5 * op_attrs(&l.op).len() + 4 * l.inputs.len() + 4)
        .sum();
    HEADER_SIZE + ids + tensors + layers
}

/// ROM footprint: the serialized model length in bytes.
pub fn rom_size(g: &ModelGraph) -> usize {
    serialized_size(g)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn malformed(offset: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        offset,
        reason: reason.into(),
    }
}

/// Parses and fully validates an `.rglm` byte stream.
pub fn parse_model(bytes: &[u8]) -> Result<ModelGraph, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| FormatError::Truncated {
        offset: 0,
        needed: HEADER_SIZE,
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { offset: 0 });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { version, offset: 4 });
    }
    let n_tensors = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let n_inputs = r.u32()? as usize;
    let n_outputs = r.u32()? as usize;
    let blob_len = r.u32()? as usize;

    let read_ids = |r: &mut Reader, n: usize| -> Result<Vec<TensorId>, FormatError> {
        let mut v = Vec::with_capacity(n.min(r.remaining() / 4));
        for _ in 0..n {
            v.push(TensorId(r.u32()?));
        }
        Ok(v)
    };
    let inputs = read_ids(&mut r, n_inputs)?;
    let outputs = read_ids(&mut r, n_outputs)?;

    let mut tensors = Vec::with_capacity(n_tensors.min(r.remaining() / 3));
    let mut tensor_offsets = Vec::with_capacity(tensors.capacity());
    let mut constant_bytes: usize = 0;
    for _ in 0..n_tensors {
        let start = r.pos;
        tensor_offsets.push(start);
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::I8,
            2 => DType::I32,
            c => return Err(malformed(start, format!("unknown dtype code {c}"))),
        };
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut elements: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            elements = elements.saturating_mul(d);
            shape.push(d);
        }
        let flags_at = r.pos;
        let flags = r.u8()?;
        if flags & !(FLAG_QUANTIZED | FLAG_CONSTANT) != 0 {
            return Err(malformed(flags_at, format!("unknown tensor flags {flags:#04x}")));
        }
        let qparams = if flags & FLAG_QUANTIZED != 0 {
            let scale = r.f32()?;
            let zero_point = r.i32()?;
            Some(QuantParams { scale, zero_point })
        } else {
            None
        };
        let constant = flags & FLAG_CONSTANT != 0;
        if constant {
            if elements == 0 || elements > MAX_ELEMENTS {
                return Err(malformed(start, "constant tensor has an invalid element count"));
            }
            constant_bytes = constant_bytes.saturating_add(elements * dtype.width());
        }
        tensors.push((
            TensorDecl {
                shape,
                dtype,
                qparams,
                data: None,
            },
            constant,
        ));
    }

    let mut layers = Vec::with_capacity(n_layers.min(r.remaining() / 8));
    let mut layer_offsets = Vec::with_capacity(layers.capacity());
    for _ in 0..n_layers {
        let start = r.pos;
        layer_offsets.push(start);
        let code = r.u8()?;
        let kind = kind_from_code(code).ok_or_else(|| malformed(start, format!("unknown layer kind {code}")))?;
        let n_attrs = r.u8()? as usize;
        let mut attrs = Vec::with_capacity(n_attrs);
        for _ in 0..n_attrs {
            let at = r.pos;
            let key = r.u8()?;
            let value = r.u32()?;
            attrs.push((at, key, value));
        }
        let op = decode_op(kind, &attrs, start)?;
        let n_in = r.u8()? as usize;
        let ins = read_ids(&mut r, n_in)?;
        let output = TensorId(r.u32()?);
        layers.push(Layer {
            op,
            inputs: ins,
            output,
        });
    }

    let blob_start = r.pos;
    if blob_len != constant_bytes {
        return Err(malformed(
            24,
            format!("blob length {blob_len} but constants need {constant_bytes} bytes"),
        ));
    }
    if r.remaining() < blob_len {
        return Err(FormatError::Truncated {
            offset: blob_start,
            needed: blob_len,
        });
    }
    let mut decls = Vec::with_capacity(tensors.len());
    for (mut decl, constant) in tensors {
        if constant {
            let n = decl.num_elements();
            let raw = r.take(n * decl.dtype.width())?;
            decl.data = Some(match decl.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::I8 => TensorData::I8(raw.iter().map(|&b| b as i8).collect()),
                DType::I32 => TensorData::I32(
                    raw.chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            });
        }
        decls.push(decl);
    }
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes { offset: r.pos });
    }

    ModelGraph::new(decls, layers, inputs, outputs).map_err(|e| {
        let layer_at = |l: usize| layer_offsets.get(l).copied().unwrap_or(blob_start);
        let tensor_at = |t: u32| tensor_offsets.get(t as usize).copied().unwrap_or(8);
        let offset = match &e {
            GraphError::DanglingTensor { layer: Some(l), .. } => layer_at(*l),
            GraphError::DanglingTensor { layer: None, .. } => HEADER_SIZE,
            GraphError::Cycle { layer }
            | GraphError::ShapeMismatch { layer, .. }
            | GraphError::Arity { layer, .. }
            | GraphError::InvalidLayer { layer, .. }
            | GraphError::MultipleProducers { layer, .. } => layer_at(*layer),
            GraphError::InvalidTensor { id, .. } | GraphError::NoProducer { id } => tensor_at(*id),
        };
        match e {
            GraphError::DanglingTensor { id, .. } => FormatError::DanglingReference { id, offset },
            GraphError::Cycle { .. } => FormatError::Cycle { offset },
            GraphError::ShapeMismatch { message, .. } => FormatError::ShapeMismatch { offset, message },
            other => FormatError::Invalid { offset, source: other },
        }
    })
}

fn decode_op(kind: OpKind, attrs: &[(usize, u8, u32)], start: usize) -> Result<Op, FormatError> {
    let required = required_keys(kind);
    for (i, &(at, key, _)) in attrs.iter().enumerate() {
        if !required.contains(&key) {
            return Err(FormatError::UnknownAttribute { key, offset: at });
        }
        if i > 0 && attrs[i - 1].1 >= key {
            return Err(malformed(at, "attribute keys must be strictly ascending"));
        }
    }
    if attrs.len() != required.len() {
        return Err(malformed(start, format!("{kind} needs {} attributes", required.len())));
    }
    let get = |key: u8| attrs.iter().find(|a| a.1 == key).map(|a| (a.0, a.2)).unwrap();
    let padding = || {
        let (at, v) = get(KEY_PADDING);
        match v {
            0 => Ok(Padding::Same),
            1 => Ok(Padding::Valid),
            _ => Err(malformed(at, format!("bad padding code {v}"))),
        }
    };
    let activation = || {
        let (at, v) = get(KEY_ACTIVATION);
        match v {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu6),
            _ => Err(malformed(at, format!("bad activation code {v}"))),
        }
    };
    let dim = |key: u8| get(key).1 as usize;
    Ok(match kind {
        OpKind::Conv2d | OpKind::DepthwiseConv2d => {
            let a = ConvAttrs {
                kernel_h: dim(KEY_KERNEL_H),
                kernel_w: dim(KEY_KERNEL_W),
                stride_h: dim(KEY_STRIDE_H),
                stride_w: dim(KEY_STRIDE_W),
                padding: padding()?,
                activation: activation()?,
            };
            if kind == OpKind::Conv2d {
                Op::Conv2d(a)
            } else {
                Op::DepthwiseConv2d(a)
            }
        }
        OpKind::MaxPool | OpKind::AvgPool => {
            let p = PoolAttrs {
                kernel_h: dim(KEY_KERNEL_H),
                kernel_w: dim(KEY_KERNEL_W),
                stride_h: dim(KEY_STRIDE_H),
                stride_w: dim(KEY_STRIDE_W),
                padding: padding()?,
            };
            if kind == OpKind::MaxPool {
                Op::MaxPool(p)
            } else {
                Op::AvgPool(p)
            }
        }
        OpKind::FullyConnected => Op::FullyConnected {
            activation: activation()?,
        },
        OpKind::Add => Op::Add {
            activation: activation()?,
        },
        OpKind::Concat => Op::Concat { axis: dim(KEY_AXIS) },
        OpKind::Relu6 => Op::Relu6,
        OpKind::Softmax => Op::Softmax,
        OpKind::Reshape => Op::Reshape,
    })
}
