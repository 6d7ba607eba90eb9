use crate::tensor::{DType, QuantParams, Tensor};

use super::graph::{infer_output_shape, Layer, ModelGraph, Op, TensorDecl, TensorId};
use super::GraphError;

/// Incremental graph construction with shape inference at each step.
///
/// Outputs of added layers inherit the dtype of the layer input; int8
/// outputs take `out_qparams` (or the input's params when `None`).
#[derive(Debug, Default)]
pub struct GraphBuilder {
    tensors: Vec<TensorDecl>,
    layers: Vec<Layer>,
    inputs: Vec<TensorId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, decl: TensorDecl) -> TensorId {
        self.tensors.push(decl);
        TensorId(self.tensors.len() as u32 - 1)
    }

    pub fn input(&mut self, shape: &[usize], dtype: DType, qparams: Option<QuantParams>) -> TensorId {
        let id = self.push(TensorDecl::activation(shape.to_vec(), dtype, qparams));
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push(TensorDecl::constant(t))
    }

    pub fn decl(&self, id: TensorId) -> &TensorDecl {
        &self.tensors[id.index()]
    }

    /// Appends a layer; `reshape_to` is required for [`Op::Reshape`] only.
    pub fn layer(
        &mut self,
        op: Op,
        inputs: &[TensorId],
        out_qparams: Option<QuantParams>,
        reshape_to: Option<&[usize]>,
    ) -> Result<TensorId, GraphError> {
        let li = self.layers.len();
        for &id in inputs {
            if id.index() >= self.tensors.len() {
                return Err(GraphError::DanglingTensor {
                    id: id.0,
                    layer: Some(li),
                });
            }
        }
        let decls: Vec<&TensorDecl> = inputs.iter().map(|&id| &self.tensors[id.index()]).collect();
        if decls.is_empty() {
            return Err(GraphError::Arity {
                layer: li,
                kind: op.kind(),
                count: 0,
            });
        }
        let shape = infer_output_shape(li, &op, &decls, reshape_to)?;
        let dtype = decls[0].dtype;
        let qparams = match dtype {
            DType::I8 => out_qparams.or(decls[0].qparams),
            _ => None,
        };
        let out = self.push(TensorDecl::activation(shape, dtype, qparams));
        self.layers.push(Layer {
            op,
            inputs: inputs.to_vec(),
            output: out,
        });
        Ok(out)
    }

    /// Conv-like layer taking a weight and bias constant.
    pub fn weighted(
        &mut self,
        op: Op,
        input: TensorId,
        weights: Tensor,
        bias: Tensor,
        out_qparams: Option<QuantParams>,
    ) -> Result<TensorId, GraphError> {
        let w = self.constant(weights);
        let b = self.constant(bias);
        self.layer(op, &[input, w, b], out_qparams, None)
    }

    pub fn simple(&mut self, op: Op, input: TensorId) -> Result<TensorId, GraphError> {
        self.layer(op, &[input], None, None)
    }

    pub fn finish(self, outputs: &[TensorId]) -> Result<ModelGraph, GraphError> {
        ModelGraph::new(self.tensors, self.layers, self.inputs, outputs.to_vec())
    }
}
