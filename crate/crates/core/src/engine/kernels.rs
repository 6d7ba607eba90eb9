//! Slice-level NHWC kernels (batch 1).
//!
//! Float kernels accumulate in f64 and narrow to f32 once per output.
//! Int8 kernels work on zero-point-shifted operands, accumulate exactly,
//! saturate to i32 once (after the bias) and requantize with a fixed-point
//! multiplier.

use crate::format::{conv_out_extent, pad_before, Activation, ConvAttrs, Padding, PoolAttrs};

use super::requant::{clamp_q, rounding_div, rounding_shift, rounding_shift_i64, saturate_i32, Multiplier};

/// Longest dot product whose i32 partial sums provably cannot overflow:
/// each term is at most 255 * 255 in magnitude.
const MAX_I32_DOT: usize = (i32::MAX as usize) / (255 * 255);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_t: usize,
    pub pad_l: usize,
}

impl Window {
    fn build(
        (h, w, c): (usize, usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        padding: Padding,
    ) -> Option<Self> {
        let oh = conv_out_extent(h, kh, sh, padding)?;
        let ow = conv_out_extent(w, kw, sw, padding)?;
        Some(Self {
            h,
            w,
            c,
            oh,
            ow,
            kh,
            kw,
            sh,
            sw,
            pad_t: pad_before(h, oh, kh, sh, padding),
            pad_l: pad_before(w, ow, kw, sw, padding),
        })
    }

    pub fn conv(hwc: (usize, usize, usize), a: &ConvAttrs) -> Option<Self> {
        Self::build(hwc, (a.kernel_h, a.kernel_w), (a.stride_h, a.stride_w), a.padding)
    }

    pub fn pool(hwc: (usize, usize, usize), p: &PoolAttrs) -> Option<Self> {
        Self::build(hwc, (p.kernel_h, p.kernel_w), (p.stride_h, p.stride_w), p.padding)
    }

    /// Valid kernel row range and input row start for output row `oy`.
    #[inline]
    fn rows(&self, oy: usize) -> (usize, usize, isize) {
        let y0 = (oy * self.sh) as isize - self.pad_t as isize;
        let lo = (-y0).max(0) as usize;
        let hi = ((self.h as isize - y0).min(self.kh as isize)).max(0) as usize;
        (lo, hi.max(lo), y0)
    }

    #[inline]
    fn cols(&self, ox: usize) -> (usize, usize, isize) {
        let x0 = (ox * self.sw) as isize - self.pad_l as isize;
        let lo = (-x0).max(0) as usize;
        let hi = ((self.w as isize - x0).min(self.kw as isize)).max(0) as usize;
        (lo, hi.max(lo), x0)
    }
}

#[inline]
fn act_f32(x: f32, act: Activation) -> f32 {
    match act {
        Activation::None => x,
        Activation::Relu6 => relu6_f32(x),
    }
}

#[inline]
pub fn relu6_f32(x: f32) -> f32 {
    x.clamp(0.0, 6.0)
}

#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

#[inline]
fn dot_i16(a: &[i16], b: &[i16]) -> i64 {
    if a.len() <= MAX_I32_DOT {
        // no overflow possible at this length
        a.iter()
            .zip(b)
            .fold(0i32, |acc, (&x, &y)| acc.wrapping_add(x as i32 * y as i32)) as i64
    } else {
        a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
    }
}

pub(crate) fn conv2d_f32(
    input: &[f32],
    win: &Window,
    weights: &[f32],
    bias: &[f32],
    out_c: usize,
    act: Activation,
) -> Vec<f32> {
    let Window {
        w, c, oh, ow, kh, kw, ..
    } = *win;
    let mut out = vec![0.0f32; oh * ow * out_c];
    for oy in 0..oh {
        let (ky0, ky1, y0) = win.rows(oy);
        for ox in 0..ow {
            let (kx0, kx1, x0) = win.cols(ox);
            let base = (oy * ow + ox) * out_c;
            for oc in 0..out_c {
                let mut acc = bias[oc] as f64;
                for ky in ky0..ky1 {
                    let iy = (y0 + ky as isize) as usize;
                    for kx in kx0..kx1 {
                        let ix = (x0 + kx as isize) as usize;
                        let i = (iy * w + ix) * c;
                        let k = ((oc * kh + ky) * kw + kx) * c;
                        acc += dot_f64(&input[i..i + c], &weights[k..k + c]);
                    }
                }
                out[base + oc] = act_f32(acc as f32, act);
            }
        }
    }
    out
}

pub(crate) fn depthwise_f32(input: &[f32], win: &Window, weights: &[f32], bias: &[f32], act: Activation) -> Vec<f32> {
    let Window { w, c, oh, ow, kw, .. } = *win;
    let mut out = vec![0.0f32; oh * ow * c];
    let mut acc = vec![0.0f64; c];
    for oy in 0..oh {
        let (ky0, ky1, y0) = win.rows(oy);
        for ox in 0..ow {
            let (kx0, kx1, x0) = win.cols(ox);
            for (a, &b) in acc.iter_mut().zip(bias) {
                *a = b as f64;
            }
            for ky in ky0..ky1 {
                let iy = (y0 + ky as isize) as usize;
                for kx in kx0..kx1 {
                    let ix = (x0 + kx as isize) as usize;
                    let px = &input[(iy * w + ix) * c..][..c];
                    let wk = &weights[(ky * kw + kx) * c..][..c];
                    for ((a, &x), &k) in acc.iter_mut().zip(px).zip(wk) {
                        *a += x as f64 * k as f64;
                    }
                }
            }
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for (dst, &a) in o.iter_mut().zip(&acc) {
                *dst = act_f32(a as f32, act);
            }
        }
    }
    out
}

pub(crate) fn fully_connected_f32(input: &[f32], weights: &[f32], bias: &[f32], act: Activation) -> Vec<f32> {
    let k = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| act_f32((b as f64 + dot_f64(input, &weights[o * k..(o + 1) * k])) as f32, act))
        .collect()
}

pub(crate) fn max_pool_f32(input: &[f32], win: &Window) -> Vec<f32> {
    pool_generic(input, win, f32::NEG_INFINITY, |acc, x| acc.max(x), |acc, _| acc)
}

pub(crate) fn avg_pool_f32(input: &[f32], win: &Window) -> Vec<f32> {
    let sums: Vec<f64> = {
        let as64: Vec<f64> = input.iter().map(|&x| x as f64).collect();
        pool_generic(&as64, win, 0.0f64, |acc, x| acc + x, |acc, n| acc / n as f64)
    };
    sums.into_iter().map(|s| s as f32).collect()
}

/// Visits the valid (unpadded) window elements of each output position.
fn pool_generic<T: Copy>(
    input: &[T],
    win: &Window,
    init: T,
    fold: impl Fn(T, T) -> T,
    finish: impl Fn(T, usize) -> T,
) -> Vec<T> {
    let Window { w, c, oh, ow, .. } = *win;
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut acc = vec![init; c];
    for oy in 0..oh {
        let (ky0, ky1, y0) = win.rows(oy);
        for ox in 0..ow {
            let (kx0, kx1, x0) = win.cols(ox);
            acc.fill(init);
            for ky in ky0..ky1 {
                let iy = (y0 + ky as isize) as usize;
                for kx in kx0..kx1 {
                    let ix = (x0 + kx as isize) as usize;
                    let px = &input[(iy * w + ix) * c..][..c];
                    for (a, &x) in acc.iter_mut().zip(px) {
                        *a = fold(*a, x);
                    }
                }
            }
            let count = (ky1 - ky0) * (kx1 - kx0);
            out.extend(acc.iter().map(|&a| finish(a, count)));
        }
    }
    out
}

/// Softmax over the innermost axis of length `n`.
pub(crate) fn softmax_f32(input: &[f32], n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(input.len());
    for row in input.chunks(n) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &x| a.max(x)) as f64;
        let e: Vec<f64> = row.iter().map(|&x| (x as f64 - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|&v| (v / s) as f32));
    }
    out
}

pub(crate) fn add_f32(a: &[f32], b: &[f32], act: Activation) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| act_f32(x + y, act)).collect()
}

/// Concatenation along `axis` for row-major operands of the given shapes.
pub(crate) fn concat<T: Copy>(parts: &[(&[T], &[usize])], axis: usize) -> Vec<T> {
    let outer: usize = parts[0].1[..axis].iter().product();
    let total: usize = parts.iter().map(|(d, _)| d.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (data, shape) in parts {
            let chunk: usize = shape[axis..].iter().product();
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// int8

/// Clamp bounds for a fused activation in the quantized output domain.
pub fn activation_range(act: Activation, out_scale: f32, out_zp: i32) -> (i32, i32) {
    match act {
        Activation::None => (-128, 127),
        Activation::Relu6 => {
            let six = crate::tensor::round_half_away(6.0 / out_scale) as i64 + out_zp as i64;
            (out_zp.max(-128), six.clamp(-128, 127) as i32)
        }
    }
}

pub(crate) fn shift_i8(data: &[i8], zp: i32) -> Vec<i16> {
    data.iter().map(|&q| (q as i32 - zp) as i16).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct QuantizedWeights {
    /// Weights minus their zero point.
    pub weights: Vec<i16>,
    pub bias: Vec<i32>,
    pub multiplier: Multiplier,
    pub in_zp: i32,
    pub out_zp: i32,
    pub act_min: i32,
    pub act_max: i32,
}

impl QuantizedWeights {
    #[inline]
    fn finish(&self, dot: i64, oc: usize) -> i8 {
        let acc = saturate_i32(dot + self.bias[oc] as i64);
        let scaled = self.multiplier.apply_i32(acc);
        clamp_q(scaled.saturating_add(self.out_zp as i64), self.act_min, self.act_max)
    }
}

/// Each output pixel gathers its receptive field into one contiguous patch
/// (zero-point-shifted, so padded taps are exactly 0) and takes one dot
/// product per output channel.
pub(crate) fn conv2d_i8(input: &[i8], win: &Window, q: &QuantizedWeights, out_c: usize) -> Vec<i8> {
    let Window {
        w, c, oh, ow, kh, kw, ..
    } = *win;
    let x = shift_i8(input, q.in_zp);
    let k_len = kh * kw * c;
    let mut patch = vec![0i16; k_len];
    let mut out = vec![0i8; oh * ow * out_c];
    for oy in 0..oh {
        let (ky0, ky1, y0) = win.rows(oy);
        for ox in 0..ow {
            let (kx0, kx1, x0) = win.cols(ox);
            let full = ky0 == 0 && ky1 == kh && kx0 == 0 && kx1 == kw;
            if !full {
                patch.fill(0);
            }
            for ky in ky0..ky1 {
                let iy = (y0 + ky as isize) as usize;
                let ix = (x0 + kx0 as isize) as usize;
                let n = (kx1 - kx0) * c;
                let src = (iy * w + ix) * c;
                let dst = (ky * kw + kx0) * c;
                patch[dst..dst + n].copy_from_slice(&x[src..src + n]);
            }
            let base = (oy * ow + ox) * out_c;
            for (oc, wk) in q.weights.chunks_exact(k_len).enumerate() {
                out[base + oc] = q.finish(dot_i16(&patch, wk), oc);
            }
        }
    }
    out
}

pub(crate) fn depthwise_i8(input: &[i8], win: &Window, q: &QuantizedWeights) -> Vec<i8> {
    let Window { w, c, oh, ow, kw, .. } = *win;
    let x = shift_i8(input, q.in_zp);
    let mut out = vec![0i8; oh * ow * c];
    // per-channel sums have at most kh * kw terms
    let narrow = win.kh * kw <= MAX_I32_DOT;
    let mut acc = vec![0i32; c];
    let mut wide = vec![0i64; c];
    for oy in 0..oh {
        let (ky0, ky1, y0) = win.rows(oy);
        for ox in 0..ow {
            let (kx0, kx1, x0) = win.cols(ox);
            acc.fill(0);
            wide.fill(0);
            for ky in ky0..ky1 {
                let iy = (y0 + ky as isize) as usize;
                for kx in kx0..kx1 {
                    let ix = (x0 + kx as isize) as usize;
                    let px = &x[(iy * w + ix) * c..][..c];
                    let wk = &q.weights[(ky * kw + kx) * c..][..c];
                    if narrow {
                        for ((a, &v), &k) in acc.iter_mut().zip(px).zip(wk) {
                            *a = a.wrapping_add(v as i32 * k as i32);
                        }
                    } else {
                        for ((a, &v), &k) in wide.iter_mut().zip(px).zip(wk) {
                            *a += (v as i32 * k as i32) as i64;
                        }
                    }
                }
            }
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for (ch, dst) in o.iter_mut().enumerate() {
                let dot = if narrow { acc[ch] as i64 } else { wide[ch] };
                *dst = q.finish(dot, ch);
            }
        }
    }
    out
}

pub(crate) fn fully_connected_i8(input: &[i8], q: &QuantizedWeights) -> Vec<i8> {
    let k = input.len();
    let x = shift_i8(input, q.in_zp);
    (0..q.bias.len())
        .map(|o| q.finish(dot_i16(&x, &q.weights[o * k..(o + 1) * k]), o))
        .collect()
}

pub(crate) fn max_pool_i8(input: &[i8], win: &Window) -> Vec<i8> {
    pool_generic(input, win, i8::MIN, |a, x| a.max(x), |a, _| a)
}

/// Integer mean over the valid window, rounded once (half away from zero).
/// Input and output share quantization params.
pub(crate) fn avg_pool_i8(input: &[i8], win: &Window) -> Vec<i8> {
    let wide: Vec<i64> = input.iter().map(|&q| q as i64).collect();
    pool_generic(&wide, win, 0i64, |a, x| a + x, |a, n| rounding_div(a, n as i64))
        .into_iter()
        .map(|v| v.clamp(-128, 127) as i8)
        .collect()
}

pub(crate) fn relu6_i8(input: &[i8], lo: i32, hi: i32) -> Vec<i8> {
    input.iter().map(|&q| (q as i32).clamp(lo, hi) as i8).collect()
}

/// Rescaling of two operands onto a shared output scale.
///
/// Both real multipliers `s_a/s_out` and `s_b/s_out` are expressed over one
/// common power-of-two denominator `2^shift` (chosen so the larger mantissa
/// is normalized to 31 bits), so the sum is rounded exactly once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AddParams {
    pub m_a: i64,
    pub m_b: i64,
    pub shift: i32,
    pub zp_a: i32,
    pub zp_b: i32,
    pub zp_out: i32,
    pub act_min: i32,
    pub act_max: i32,
}

impl AddParams {
    pub fn new((s_a, zp_a): (f32, i32), (s_b, zp_b): (f32, i32), (s_out, zp_out): (f32, i32), act: Activation) -> Self {
        let ra = s_a as f64 / s_out as f64;
        let rb = s_b as f64 / s_out as f64;
        let top = Multiplier::from_real(ra.max(rb));
        let shift = top.total_shift();
        let scale = 2f64.powi(shift);
        let (act_min, act_max) = activation_range(act, s_out, zp_out);
        Self {
            m_a: (ra * scale).round() as i64,
            m_b: (rb * scale).round() as i64,
            shift,
            zp_a,
            zp_b,
            zp_out,
            act_min,
            act_max,
        }
    }
}

pub(crate) fn add_i8(a: &[i8], b: &[i8], p: &AddParams) -> Vec<i8> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            // |x - zp| <= 255 and both multipliers are below 2^32, so the
            // sum stays far inside i64
            let acc = (x as i32 - p.zp_a) as i64 * p.m_a + (y as i32 - p.zp_b) as i64 * p.m_b;
            let r = rounding_shift_i64(acc, p.shift).unwrap_or_else(|| rounding_shift(acc as i128, p.shift));
            clamp_q(r.saturating_add(p.zp_out as i64), p.act_min, p.act_max)
        })
        .collect()
}

/// Moves int8 values from one quantization onto another.
pub(crate) fn rescale_i8(input: &[i8], zp_in: i32, m: Multiplier, zp_out: i32) -> Vec<i8> {
    input
        .iter()
        .map(|&q| {
            clamp_q(
                m.apply((q as i32 - zp_in) as i64).saturating_add(zp_out as i64),
                -128,
                127,
            )
        })
        .collect()
}

/// Lookup-table softmax: `exp(-d * in_scale)` in Q20 for every possible
/// distance `d` from the row maximum, normalized with integer division.
#[derive(Debug, Clone)]
pub(crate) struct SoftmaxTable {
    lut: [u64; 256],
    /// `round(2^20 / out_scale)`
    recip: u64,
    zp_out: i32,
}

const SOFTMAX_ONE: f64 = (1u64 << 20) as f64;

impl SoftmaxTable {
    pub fn new(in_scale: f32, out_scale: f32, zp_out: i32) -> Self {
        let mut lut = [0u64; 256];
        for (d, v) in lut.iter_mut().enumerate() {
            *v = ((-(d as f64) * in_scale as f64).exp() * SOFTMAX_ONE).round() as u64;
        }
        let recip = ((SOFTMAX_ONE / out_scale as f64).round() as u64).max(1);
        Self { lut, recip, zp_out }
    }
}

pub(crate) fn softmax_i8(input: &[i8], n: usize, t: &SoftmaxTable) -> Vec<i8> {
    let mut out = Vec::with_capacity(input.len());
    for row in input.chunks(n) {
        let m = row.iter().copied().max().unwrap_or(0) as i32;
        let sum: u128 = row.iter().map(|&q| t.lut[(m - q as i32) as usize] as u128).sum();
        let den = sum * SOFTMAX_ONE as u128;
        for &q in row {
            let num = t.lut[(m - q as i32) as usize] as u128 * t.recip as u128;
            let v = if den == 0 {
                0
            } else {
                ((2 * num + den) / (2 * den)) as i64
            };
            out.push(clamp_q(v.saturating_add(t.zp_out as i64), -128, 127));
        }
    }
    out
}
