//! Dense NHWC tensors and per-tensor affine quantization.
//!
//! Real values `r` and int8 quanta `q` are related by
//! `r = scale * (q - zero_point)`. All rounding is half-away-from-zero.

use thiserror::Error;

/// Smallest and largest int8 quantum.
pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid quantization range [{min}, {max}]")]
    InvalidRange { min: f32, max: f32 },
    #[error("invalid quantization params: scale {scale}, zero point {zero_point}")]
    InvalidQuantParams { scale: f32, zero_point: i32 },
    #[error("shape {shape:?} holds {expected} elements but data has {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{dtype:?} tensor {requirement}")]
    QuantParamsRule { dtype: DType, requirement: &'static str },
    #[error("expected {expected:?} tensor, got {actual:?}")]
    DTypeMismatch { expected: DType, actual: DType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    /// Bytes per element.
    pub fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::I8 => "int8",
            DType::I32 => "int32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self, TensorError> {
        if !(scale.is_finite() && scale > 0.0) || !(QMIN..=QMAX).contains(&zero_point) {
            return Err(TensorError::InvalidQuantParams { scale, zero_point });
        }
        Ok(Self { scale, zero_point })
    }

    /// Quantizes one real value with saturation.
    #[inline]
    pub fn quantize_value(&self, x: f32) -> i8 {
        // f32 division keeps e.g. 0.25 / 0.1 at exactly 2.5.
        let q = round_half_away(x / self.scale) as i64 + self.zero_point as i64;
        q.clamp(QMIN as i64, QMAX as i64) as i8
    }

    #[inline]
    pub fn dequantize_value(&self, q: i32) -> f32 {
        self.scale * (q - self.zero_point) as f32
    }
}

/// Rounds to nearest, ties away from zero. NaN maps to 0.
#[inline]
pub fn round_half_away(x: f32) -> f32 {
    if x.is_nan() {
        0.0
    } else {
        x.round()
    }
}

/// Derives per-tensor asymmetric int8 parameters for the observed range.
///
/// The range is first widened to include 0.0 so that zero is exactly
/// representable. A degenerate range (both ends zero after widening) gets
/// `scale = max(|max_val|, 1) / 127` when `max_val != 0`, else `1.0`, with a
/// zero point of 0.
pub fn compute_qparams(min_val: f32, max_val: f32) -> Result<QuantParams, TensorError> {
    if !min_val.is_finite() || !max_val.is_finite() || min_val > max_val {
        return Err(TensorError::InvalidRange {
            min: min_val,
            max: max_val,
        });
    }
    let lo = min_val.min(0.0);
    let hi = max_val.max(0.0);
    if lo == hi {
        let scale = if max_val != 0.0 {
            max_val.abs().max(1.0) / 127.0
        } else {
            1.0
        };
        return Ok(QuantParams { scale, zero_point: 0 });
    }
    let scale = (hi - lo) / 255.0;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(TensorError::InvalidRange {
            min: min_val,
            max: max_val,
        });
    }
    // min'/scale evaluated as min' * 255 / (max' - min') so exact ties stay exact
    let ratio = lo as f64 * 255.0 / (hi as f64 - lo as f64);
    let zp = QMIN - ratio.round() as i32;
    Ok(QuantParams {
        scale,
        zero_point: zp.clamp(QMIN, QMAX),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::I8 => TensorData::I8(vec![0; len]),
            DType::I32 => TensorData::I32(vec![0; len]),
        }
    }
}

/// Row-major tensor. Image tensors use NHWC (or HWC for decoded images).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
    qparams: Option<QuantParams>,
}

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, checking element count and the qparams rule
    /// (int8 requires qparams, float32 forbids them, int32 may carry them).
    pub fn new(shape: Vec<usize>, data: TensorData, qparams: Option<QuantParams>) -> Result<Self, TensorError> {
        let expected = num_elements(&shape);
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        match (data.dtype(), qparams) {
            (DType::I8, None) => {
                return Err(TensorError::QuantParamsRule {
                    dtype: DType::I8,
                    requirement: "requires quantization params",
                })
            }
            (DType::F32, Some(_)) => {
                return Err(TensorError::QuantParamsRule {
                    dtype: DType::F32,
                    requirement: "must not carry quantization params",
                })
            }
            _ => {}
        }
        Ok(Self { shape, data, qparams })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data), None)
    }

    pub fn from_i8(shape: Vec<usize>, data: Vec<i8>, qp: QuantParams) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I8(data), Some(qp))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>, qp: Option<QuantParams>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I32(data), qp)
    }

    pub fn zeros_f32(shape: Vec<usize>) -> Self {
        let n = num_elements(&shape);
        Self {
            shape,
            data: TensorData::F32(vec![0.0; n]),
            qparams: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn qparams(&self) -> Option<QuantParams> {
        self.qparams
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData, Option<QuantParams>) {
        (self.shape, self.data, self.qparams)
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data.clone(), self.qparams)
    }

    /// Real-valued view: float32 as is, int8/int32 through their qparams
    /// (int32 without qparams is converted directly).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match (&self.data, self.qparams) {
            (TensorData::F32(v), _) => v.clone(),
            (TensorData::I8(v), Some(qp)) => v.iter().map(|&q| qp.dequantize_value(q as i32)).collect(),
            (TensorData::I8(v), None) => v.iter().map(|&q| q as f32).collect(),
            (TensorData::I32(v), Some(qp)) => v
                .iter()
                .map(|&q| (qp.scale as f64 * (q as i64 - qp.zero_point as i64) as f64) as f32)
                .collect(),
            (TensorData::I32(v), None) => v.iter().map(|&q| q as f32).collect(),
        }
    }

    /// Minimum and maximum element as reals; `None` for an empty tensor.
    pub fn min_max(&self) -> Option<(f32, f32)> {
        let v = self.to_f32_vec();
        let mut it = v.iter().copied().filter(|x| !x.is_nan());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }
}

/// Elementwise `q = clamp(round(x / scale) + zero_point, -128, 127)`.
pub fn quantize(t: &Tensor, qp: QuantParams) -> Result<Tensor, TensorError> {
    let src = t.as_f32().ok_or(TensorError::DTypeMismatch {
        expected: DType::F32,
        actual: t.dtype(),
    })?;
    let data = src.iter().map(|&x| qp.quantize_value(x)).collect();
    Tensor::from_i8(t.shape.clone(), data, qp)
}

/// Elementwise `x = scale * (q - zero_point)`.
pub fn dequantize(t: &Tensor, qp: QuantParams) -> Result<Tensor, TensorError> {
    let src = t.as_i8().ok_or(TensorError::DTypeMismatch {
        expected: DType::I8,
        actual: t.dtype(),
    })?;
    let data = src.iter().map(|&q| qp.dequantize_value(q as i32)).collect();
    Tensor::from_f32(t.shape.clone(), data)
}
