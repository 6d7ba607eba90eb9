//! Post-training int8 quantization.
//!
//! Calibration runs the float graph over representative images and records
//! each activation tensor's absolute min/max. [`quantize_model`] then turns
//! every weight into per-tensor int8 (ranges from the weights themselves),
//! every bias into int32 at `in_scale * w_scale`, and every activation into
//! int8 with params from the recorded ranges.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::engine::{prepare_input, ExecError, Interpreter};
use crate::format::{GraphError, ModelGraph, TensorDecl, TensorId};
use crate::tensor::{compute_qparams, quantize, DType, QuantParams, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum QuantizeError {
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("graph is already quantized")]
    AlreadyQuantized,
    #[error("no calibration statistics for tensor {tensor}")]
    MissingStats { tensor: TensorId },
    #[error("calibration image {index}: {source}")]
    Calibration { index: usize, source: ExecError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Observed range of one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorStats {
    pub min: f32,
    pub max: f32,
    pub count: usize,
}

impl TensorStats {
    fn merge(self, o: TensorStats) -> TensorStats {
        TensorStats {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
            count: self.count + o.count,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStats {
    pub tensors: BTreeMap<TensorId, TensorStats>,
}

impl CalibrationStats {
    pub fn get(&self, id: TensorId) -> Option<&TensorStats> {
        self.tensors.get(&id)
    }

    /// Folds one observation of a tensor into the running range. Tensors
    /// without finite values still count as seen.
    pub fn observe(&mut self, id: TensorId, t: &Tensor) {
        let (min, max) = t.min_max().unwrap_or((0.0, 0.0));
        let s = TensorStats { min, max, count: 1 };
        self.tensors.entry(id).and_modify(|e| *e = e.merge(s)).or_insert(s);
    }

    /// Elementwise union; associative and commutative.
    pub fn merge(mut self, other: CalibrationStats) -> CalibrationStats {
        for (id, s) in other.tensors {
            self.tensors.entry(id).and_modify(|e| *e = e.merge(s)).or_insert(s);
        }
        self
    }
}

/// Runs float inference over `images` (in parallel) and records the range
/// of every graph input and layer output.
pub fn calibrate(g: &ModelGraph, images: &[Tensor]) -> Result<CalibrationStats, QuantizeError> {
    if images.is_empty() {
        return Err(QuantizeError::EmptyCalibrationSet);
    }
    if g.is_quantized() {
        return Err(QuantizeError::AlreadyQuantized);
    }
    let interp = Interpreter::new(g);
    images
        .par_iter()
        .enumerate()
        .map(|(index, img)| {
            let mut stats = CalibrationStats::default();
            let x = prepare_input(g, img).map_err(|source| QuantizeError::Calibration { index, source })?;
            interp
                .invoke_observed(&[x], &mut |id, t| stats.observe(id, t))
                .map_err(|source| QuantizeError::Calibration { index, source })?;
            Ok(stats)
        })
        .try_reduce(CalibrationStats::default, |a, b| Ok(a.merge(b)))
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Activation,
    Weights,
    Bias { input: TensorId, weights: TensorId },
}

/// Produces the int8 twin of a float graph. Topology and shapes are kept;
/// only dtypes, quantization params and constant payloads change.
pub fn quantize_model(g: &ModelGraph, stats: &CalibrationStats) -> Result<ModelGraph, QuantizeError> {
    if g.is_quantized() {
        return Err(QuantizeError::AlreadyQuantized);
    }
    let mut roles = vec![Role::Activation; g.tensors.len()];
    for layer in &g.layers {
        if layer.op.has_weights() {
            roles[layer.inputs[1].index()] = Role::Weights;
            if let Some(&b) = layer.inputs.get(2) {
                roles[b.index()] = Role::Bias {
                    input: layer.inputs[0],
                    weights: layer.inputs[1],
                };
            }
        }
    }

    let mut qps: Vec<Option<QuantParams>> = vec![None; g.tensors.len()];
    let from_stats = |id: TensorId| -> Result<QuantParams, QuantizeError> {
        let s = stats.get(id).ok_or(QuantizeError::MissingStats { tensor: id })?;
        Ok(compute_qparams(s.min, s.max)?)
    };
    for &id in &g.inputs {
        qps[id.index()] = Some(from_stats(id)?);
    }
    for (_, layer) in g.ordered_layers() {
        let out = layer.output;
        qps[out.index()] = Some(if layer.op.is_qparam_passthrough() {
            qps[layer.inputs[0].index()].expect("input quantized before its consumer")
        } else {
            from_stats(out)?
        });
    }

    let mut tensors = Vec::with_capacity(g.tensors.len());
    for (i, decl) in g.tensors.iter().enumerate() {
        let new = match (decl.constant_tensor(), roles[i]) {
            (None, _) => TensorDecl::activation(decl.shape.clone(), DType::I8, qps[i]),
            (Some(w), Role::Weights) => {
                let (lo, hi) = w.min_max().unwrap_or((0.0, 0.0));
                let qp = compute_qparams(lo, hi)?;
                qps[i] = Some(qp);
                TensorDecl::constant(quantize(&w, qp)?)
            }
            (Some(_), Role::Activation) => {
                // Validation forbids constants outside weight/bias slots.
                return Err(QuantizeError::Graph(GraphError::InvalidTensor {
                    id: i as u32,
                    reason: "constant is not a weight or bias".into(),
                }));
            }
            (Some(_), Role::Bias { .. }) => decl.clone(), // filled below
        };
        tensors.push(new);
    }
    for (i, role) in roles.iter().enumerate() {
        if let (Role::Bias { input, weights }, Some(b)) = (*role, g.tensors[i].constant_tensor()) {
            let (in_qp, w_qp) = (qps[input.index()], qps[weights.index()]);
            let scale = in_qp.expect("activation params").scale as f64 * w_qp.expect("weight params").scale as f64;
            tensors[i] = TensorDecl::constant(quantize_bias(&b, scale)?);
        }
    }
    Ok(ModelGraph::new(
        tensors,
        g.layers.clone(),
        g.inputs.clone(),
        g.outputs.clone(),
    )?)
}

fn quantize_bias(b: &Tensor, scale: f64) -> Result<Tensor, TensorError> {
    let q = b
        .to_f32_vec()
        .iter()
        .map(|&v| (v as f64 / scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect();
    let qp = QuantParams::new(scale as f32, 0)?;
    Tensor::from_i32(b.shape().to_vec(), q, Some(qp))
}
