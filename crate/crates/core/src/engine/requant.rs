//! Fixed-point rescaling of int32 accumulators into the int8 domain.
//!
//! A positive real multiplier `M` is stored as a 31-bit normalized mantissa
//! `m` in `[2^30, 2^31)` and an exponent `shift` such that
//!
//! ```text
//! M ~= m * 2^-(31 + shift)
//! ```
//!
//! Applying it to an accumulator is `round_half_away(acc * m / 2^(31 + shift))`,
//! evaluated exactly in 128-bit integers: the product is formed, then shifted
//! right by `31 + shift` with ties rounded away from zero (a negative total
//! shift is a saturating left shift). The only floating point happens once,
//! when the multiplier is derived from the scales.

use crate::tensor::{QuantParams, QMAX, QMIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Multiplier {
    pub mantissa: i32,
    pub shift: i32,
}

impl Multiplier {
    /// Normalizes `real` (> 0, finite) into mantissa/shift form.
    pub fn from_real(real: f64) -> Self {
        assert!(
            real.is_finite() && real > 0.0,
            "multiplier must be positive, got {real}"
        );
        let (mut frac, mut exp) = (real, 0i32);
        while frac >= 1.0 {
            frac *= 0.5;
            exp += 1;
        }
        while frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut m = (frac * (1u64 << 31) as f64).round() as i64;
        if m == 1i64 << 31 {
            m /= 2;
            exp += 1;
        }
        Multiplier {
            mantissa: m as i32,
            shift: -exp,
        }
    }

    /// The real value this multiplier represents.
    pub fn to_real(self) -> f64 {
        self.mantissa as f64 * 2f64.powi(-(31 + self.shift))
    }

    /// Total right shift applied after multiplying by the mantissa.
    pub fn total_shift(self) -> i32 {
        31 + self.shift
    }

    #[inline]
    pub fn apply(self, acc: i64) -> i64 {
        if let Ok(a) = i32::try_from(acc) {
            return self.apply_i32(a);
        }
        rounding_shift(acc as i128 * self.mantissa as i128, self.total_shift())
    }

    /// Same result as [`Multiplier::apply`]; stays in 64-bit arithmetic
    /// whenever the shift allows (`|acc * m| < 2^62`).
    #[inline]
    pub fn apply_i32(self, acc: i32) -> i64 {
        let p = acc as i64 * self.mantissa as i64;
        rounding_shift_i64(p, self.total_shift()).unwrap_or_else(|| rounding_shift(p as i128, self.total_shift()))
    }
}

/// 64-bit [`rounding_shift`] for `1 <= shift <= 62` and `|x| < 2^62`;
/// `None` outside that range.
#[inline]
pub fn rounding_shift_i64(x: i64, shift: i32) -> Option<i64> {
    const LIMIT: i64 = 1 << 62;
    if !(1..=62).contains(&shift) || x >= LIMIT || x <= -LIMIT {
        return None;
    }
    let s = shift as u32;
    let half = 1i64 << (s - 1);
    Some(if x >= 0 { (x + half) >> s } else { -((-x + half) >> s) })
}

/// `round_half_away(x / 2^shift)` for `shift >= 0`; saturating `x * 2^-shift`
/// otherwise. Results are clamped into `i64`.
#[inline]
pub fn rounding_shift(x: i128, shift: i32) -> i64 {
    let v = if shift <= 0 {
        let s = (-shift).min(126) as u32;
        x.saturating_mul(1i128 << s)
    } else if shift >= 127 {
        0
    } else {
        let s = shift as u32;
        let half = 1i128 << (s - 1);
        if x >= 0 {
            (x + half) >> s
        } else {
            -((-x + half) >> s)
        }
    };
    v.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

/// Rounds `num / den` half away from zero; `den > 0`.
#[inline]
pub fn rounding_div(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let (n, d) = (num as i128, den as i128);
    let q = if n >= 0 { (n + d / 2) / d } else { -((-n + d / 2) / d) };
    q as i64
}

#[inline]
pub fn saturate_i32(x: i64) -> i32 {
    x.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

#[inline]
pub fn clamp_q(x: i64, lo: i32, hi: i32) -> i8 {
    x.clamp(lo as i64, hi as i64) as i8
}

/// Rescales an accumulator expressed in units of `in_scale * w_scale` into
/// the quantized output domain: `clamp(M * acc + zero_point)` with
/// `M = in_scale * w_scale / out_scale`.
pub fn requantize(acc: i32, in_scale: f32, w_scale: f32, out_qp: QuantParams) -> i8 {
    let m = Multiplier::from_real(in_scale as f64 * w_scale as f64 / out_qp.scale as f64);
    requantize_with(acc, m, out_qp.zero_point, QMIN, QMAX)
}

/// Requantization with a prepared multiplier and an activation clamp range.
#[inline]
pub fn requantize_with(acc: i32, m: Multiplier, zero_point: i32, lo: i32, hi: i32) -> i8 {
    let scaled = m.apply(acc as i64);
    clamp_q(scaled.saturating_add(zero_point as i64), lo, hi)
}
