//! Tensor-level entry points for individual kernels.
//!
//! Each call wraps the operands in a one-layer graph and executes it, so
//! these behave exactly like the same layer inside a larger model. Int8
//! calls take the output quantization params explicitly.

use crate::format::{Activation, ConvAttrs, GraphBuilder, GraphError, Op, PoolAttrs};
use crate::tensor::{QuantParams, Tensor};

use super::{ExecError, ExecMode, Interpreter};

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn single(
    op: Op,
    operands: &[&Tensor],
    constants: &[&Tensor],
    out_qp: Option<QuantParams>,
    mode: ExecMode,
) -> Result<Tensor, OpError> {
    let mut b = GraphBuilder::new();
    let mut ids: Vec<_> = operands
        .iter()
        .map(|t| b.input(t.shape(), t.dtype(), t.qparams()))
        .collect();
    ids.extend(constants.iter().map(|t| b.constant((*t).clone())));
    let out = b.layer(op, &ids, out_qp, None)?;
    let g = b.finish(&[out])?;
    let inputs: Vec<Tensor> = operands.iter().map(|t| (*t).clone()).collect();
    let (mut outs, _) = Interpreter::with_mode(&g, mode).invoke(&inputs)?;
    Ok(outs.remove(0))
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    attrs: ConvAttrs,
    out_qp: Option<QuantParams>,
) -> Result<Tensor, OpError> {
    single(Op::Conv2d(attrs), &[input], &[weights, bias], out_qp, ExecMode::Integer)
}

pub fn depthwise_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    attrs: ConvAttrs,
    out_qp: Option<QuantParams>,
) -> Result<Tensor, OpError> {
    single(
        Op::DepthwiseConv2d(attrs),
        &[input],
        &[weights, bias],
        out_qp,
        ExecMode::Integer,
    )
}

pub fn fully_connected(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
    out_qp: Option<QuantParams>,
) -> Result<Tensor, OpError> {
    single(
        Op::FullyConnected { activation },
        &[input],
        &[weights, bias],
        out_qp,
        ExecMode::Integer,
    )
}

pub fn max_pool(input: &Tensor, attrs: PoolAttrs) -> Result<Tensor, OpError> {
    single(Op::MaxPool(attrs), &[input], &[], None, ExecMode::Integer)
}

pub fn avg_pool(input: &Tensor, attrs: PoolAttrs) -> Result<Tensor, OpError> {
    single(Op::AvgPool(attrs), &[input], &[], None, ExecMode::Integer)
}

pub fn relu6(input: &Tensor) -> Result<Tensor, OpError> {
    single(Op::Relu6, &[input], &[], None, ExecMode::Integer)
}

pub fn softmax(input: &Tensor, out_qp: Option<QuantParams>) -> Result<Tensor, OpError> {
    single(Op::Softmax, &[input], &[], out_qp, ExecMode::Integer)
}

pub fn add(a: &Tensor, b: &Tensor, activation: Activation, out_qp: Option<QuantParams>) -> Result<Tensor, OpError> {
    single(Op::Add { activation }, &[a, b], &[], out_qp, ExecMode::Integer)
}

pub fn concat(parts: &[&Tensor], axis: usize, out_qp: Option<QuantParams>) -> Result<Tensor, OpError> {
    single(Op::Concat { axis }, parts, &[], out_qp, ExecMode::Integer)
}

/// Runs one weighted layer through the dequantize / float / quantize path.
pub fn reference_weighted(
    op: Op,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    out_qp: Option<QuantParams>,
) -> Result<Tensor, OpError> {
    single(op, &[input], &[weights, bias], out_qp, ExecMode::FloatReference)
}
