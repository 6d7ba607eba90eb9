//! Naive-loop float oracles and an integer reference recipe for the int8
//! kernels, written without reusing anything from the engine.

use rockhunt::engine::ops;
use rockhunt::fixtures::{below, rng, uniform, FixtureRng};
use rockhunt::format::{Activation, ConvAttrs, Padding, PoolAttrs};
use rockhunt::tensor::{QuantParams, Tensor};

#[derive(Debug, Clone)]
pub struct KernelSummary {
    pub kernel: &'static str,
    pub cases: usize,
    /// Largest absolute deviation (float kernels).
    pub max_abs_err: f64,
    /// Elements that differ (int8 kernels).
    pub mismatches: usize,
    /// Compared int8 elements, and how many of them were not saturated.
    pub elements: usize,
    pub interior: usize,
}

impl KernelSummary {
    fn new(kernel: &'static str) -> Self {
        Self {
            kernel,
            cases: 0,
            max_abs_err: 0.0,
            mismatches: 0,
            elements: 0,
            interior: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub padding: Padding,
}

/// Output extent and leading pad along one axis.
fn axis(n: usize, k: usize, s: usize, p: Padding) -> (usize, usize) {
    match p {
        Padding::Valid => ((n - k) / s + 1, 0),
        Padding::Same => {
            let o = n.div_ceil(s);
            let need = (o - 1) * s + k;
            (o, need.saturating_sub(n) / 2)
        }
    }
}

impl Geometry {
    pub fn random(r: &mut FixtureRng) -> Self {
        loop {
            let g = Geometry {
                h: 1 + below(r, 8),
                w: 1 + below(r, 8),
                c: 1 + below(r, 5),
                kh: 1 + below(r, 4),
                kw: 1 + below(r, 4),
                sh: 1 + below(r, 3),
                sw: 1 + below(r, 3),
                padding: if below(r, 2) == 0 {
                    Padding::Same
                } else {
                    Padding::Valid
                },
            };
            if g.padding == Padding::Valid && (g.h < g.kh || g.w < g.kw) {
                continue;
            }
            return g;
        }
    }

    /// `(oh, ow, pad_top, pad_left)`
    pub fn out(&self) -> (usize, usize, usize, usize) {
        let (oh, pt) = axis(self.h, self.kh, self.sh, self.padding);
        let (ow, pl) = axis(self.w, self.kw, self.sw, self.padding);
        (oh, ow, pt, pl)
    }

    /// Input coordinates of tap `(ky, kx)` for output `(oy, ox)`, if inside.
    fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let (_, _, pt, pl) = self.out();
        let iy = (oy * self.sh + ky) as isize - pt as isize;
        let ix = (ox * self.sw + kx) as isize - pl as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }

    fn conv_attrs(&self, act: Activation) -> ConvAttrs {
        ConvAttrs {
            kernel_h: self.kh,
            kernel_w: self.kw,
            stride_h: self.sh,
            stride_w: self.sw,
            padding: self.padding,
            activation: act,
        }
    }

    fn pool_attrs(&self) -> PoolAttrs {
        PoolAttrs {
            kernel_h: self.kh,
            kernel_w: self.kw,
            stride_h: self.sh,
            stride_w: self.sw,
            padding: self.padding,
        }
    }
}

fn random_act(r: &mut FixtureRng) -> Activation {
    if below(r, 2) == 0 {
        Activation::None
    } else {
        Activation::Relu6
    }
}

fn vals(r: &mut FixtureRng, n: usize, lo: f64, hi: f64) -> Vec<f32> {
    (0..n).map(|_| uniform(r, lo, hi) as f32).collect()
}

fn ft(shape: &[usize], v: Vec<f32>) -> Tensor {
    Tensor::from_f32(shape.to_vec(), v).unwrap()
}

fn act_f(x: f64, act: Activation) -> f64 {
    match act {
        Activation::None => x,
        Activation::Relu6 => x.clamp(0.0, 6.0),
    }
}

fn max_err(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// float oracles

pub fn conv_oracle(x: &[f32], g: &Geometry, wts: &[f32], bias: &[f32], oc: usize, act: Activation) -> Vec<f64> {
    let (oh, ow, _, _) = g.out();
    let mut out = vec![0.0; oh * ow * oc];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let mut acc = bias[o] as f64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        for ic in 0..g.c {
                            if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                                let xv = x[(iy * g.w + ix) * g.c + ic] as f64;
                                let wv = wts[((o * g.kh + ky) * g.kw + kx) * g.c + ic] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                }
                out[(oy * ow + ox) * oc + o] = act_f(acc, act);
            }
        }
    }
    out
}

pub fn depthwise_oracle(x: &[f32], g: &Geometry, wts: &[f32], bias: &[f32], act: Activation) -> Vec<f64> {
    let (oh, ow, _, _) = g.out();
    let mut out = vec![0.0; oh * ow * g.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..g.c {
                let mut acc = bias[ch] as f64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                            acc += x[(iy * g.w + ix) * g.c + ch] as f64 * wts[(ky * g.kw + kx) * g.c + ch] as f64;
                        }
                    }
                }
                out[(oy * ow + ox) * g.c + ch] = act_f(acc, act);
            }
        }
    }
    out
}

pub fn fc_oracle(x: &[f32], wts: &[f32], bias: &[f32], act: Activation) -> Vec<f64> {
    let k = x.len();
    (0..bias.len())
        .map(|o| {
            let mut acc = bias[o] as f64;
            for i in 0..k {
                acc += x[i] as f64 * wts[o * k + i] as f64;
            }
            act_f(acc, act)
        })
        .collect()
}

/// Pooling over the in-bounds part of each window.
pub fn pool_oracle(x: &[f32], g: &Geometry, max: bool) -> Vec<f64> {
    let (oh, ow, _, _) = g.out();
    let mut out = vec![0.0; oh * ow * g.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..g.c {
                let mut seen = Vec::new();
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                            seen.push(x[(iy * g.w + ix) * g.c + ch] as f64);
                        }
                    }
                }
                out[(oy * ow + ox) * g.c + ch] = if max {
                    seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    seen.iter().sum::<f64>() / seen.len() as f64
                };
            }
        }
    }
    out
}

pub fn softmax_oracle(x: &[f32], n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.chunks(n) {
        let m = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        out.extend(row.iter().map(|&v| (v as f64 - m).exp() / total));
    }
    out
}

/// Concatenation by explicit index arithmetic over 4-d shapes.
pub fn concat_oracle<T: Copy>(parts: &[(Vec<T>, [usize; 4])], axis: usize) -> Vec<T> {
    let mut shape = parts[0].1;
    shape[axis] = parts.iter().map(|(_, s)| s[axis]).sum();
    let mut out = Vec::new();
    for a in 0..shape[0] {
        for b in 0..shape[1] {
            for c in 0..shape[2] {
                for d in 0..shape[3] {
                    let mut idx = [a, b, c, d];
                    for (data, s) in parts {
                        if idx[axis] < s[axis] {
                            out.push(data[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]]);
                            break;
                        }
                        idx[axis] -= s[axis];
                    }
                }
            }
        }
    }
    out
}

pub fn float_trials(seed: u64, n: usize) -> Vec<KernelSummary> {
    let mut r = rng(seed);
    let names = [
        "conv2d",
        "depthwise_conv2d",
        "fully_connected",
        "max_pool",
        "avg_pool",
        "relu6",
        "softmax",
        "add",
        "concat",
    ];
    let mut sums: Vec<KernelSummary> = names.iter().map(|n| KernelSummary::new(n)).collect();
    for _ in 0..n {
        let g = Geometry::random(&mut r);
        let act = random_act(&mut r);
        let shape = [1, g.h, g.w, g.c];
        let x = vals(&mut r, g.h * g.w * g.c, -2.0, 2.0);
        let xt = ft(&shape, x.clone());

        let oc = 1 + below(&mut r, 5);
        let wts = vals(&mut r, oc * g.kh * g.kw * g.c, -1.0, 1.0);
        let bias = vals(&mut r, oc, -1.0, 1.0);
        let y = ops::conv2d(
            &xt,
            &ft(&[oc, g.kh, g.kw, g.c], wts.clone()),
            &ft(&[oc], bias.clone()),
            g.conv_attrs(act),
            None,
        )
        .unwrap();
        let e = max_err(y.as_f32().unwrap(), &conv_oracle(&x, &g, &wts, &bias, oc, act));
        sums[0].max_abs_err = sums[0].max_abs_err.max(e);

        let wts = vals(&mut r, g.kh * g.kw * g.c, -1.0, 1.0);
        let bias = vals(&mut r, g.c, -1.0, 1.0);
        let y = ops::depthwise_conv2d(
            &xt,
            &ft(&[1, g.kh, g.kw, g.c], wts.clone()),
            &ft(&[g.c], bias.clone()),
            g.conv_attrs(act),
            None,
        )
        .unwrap();
        let e = max_err(y.as_f32().unwrap(), &depthwise_oracle(&x, &g, &wts, &bias, act));
        sums[1].max_abs_err = sums[1].max_abs_err.max(e);

        let k = x.len();
        let wts = vals(&mut r, oc * k, -1.0, 1.0);
        let bias = vals(&mut r, oc, -1.0, 1.0);
        let flat = ft(&[1, k], x.clone());
        let y = ops::fully_connected(&flat, &ft(&[oc, k], wts.clone()), &ft(&[oc], bias.clone()), act, None).unwrap();
        let e = max_err(y.as_f32().unwrap(), &fc_oracle(&x, &wts, &bias, act));
        sums[2].max_abs_err = sums[2].max_abs_err.max(e);

        let y = ops::max_pool(&xt, g.pool_attrs()).unwrap();
        sums[3].max_abs_err = sums[3]
            .max_abs_err
            .max(max_err(y.as_f32().unwrap(), &pool_oracle(&x, &g, true)));
        let y = ops::avg_pool(&xt, g.pool_attrs()).unwrap();
        sums[4].max_abs_err = sums[4]
            .max_abs_err
            .max(max_err(y.as_f32().unwrap(), &pool_oracle(&x, &g, false)));

        let y = ops::relu6(&ft(&shape, x.iter().map(|v| v * 4.0).collect())).unwrap();
        let want: Vec<f64> = x.iter().map(|&v| ((v * 4.0) as f64).clamp(0.0, 6.0)).collect();
        sums[5].max_abs_err = sums[5].max_abs_err.max(max_err(y.as_f32().unwrap(), &want));

        let y = ops::softmax(&xt, None).unwrap();
        sums[6].max_abs_err = sums[6]
            .max_abs_err
            .max(max_err(y.as_f32().unwrap(), &softmax_oracle(&x, g.c)));

        let other = vals(&mut r, x.len(), -4.0, 4.0);
        let y = ops::add(&xt, &ft(&shape, other.clone()), act, None).unwrap();
        let want: Vec<f64> = x
            .iter()
            .zip(&other)
            .map(|(&a, &b)| act_f((a + b) as f64, act))
            .collect();
        sums[7].max_abs_err = sums[7].max_abs_err.max(max_err(y.as_f32().unwrap(), &want));

        let ax = 1 + below(&mut r, 3);
        let mut s2 = shape;
        s2[ax] = 1 + below(&mut r, 4);
        let second = vals(&mut r, s2.iter().product(), -2.0, 2.0);
        let y = ops::concat(&[&xt, &ft(&s2, second.clone())], ax, None).unwrap();
        let want: Vec<f64> = concat_oracle(&[(x.clone(), shape), (second, s2)], ax)
            .iter()
            .map(|&v| v as f64)
            .collect();
        sums[8].max_abs_err = sums[8].max_abs_err.max(max_err(y.as_f32().unwrap(), &want));

        for s in &mut sums {
            s.cases += 1;
        }
    }
    sums
}

// ---------------------------------------------------------------------------
// int8 reference recipe

/// `(mantissa, total_right_shift)` with the mantissa in `[2^30, 2^31)`.
pub fn ref_multiplier(real: f64) -> (i64, i32) {
    let mut e = real.log2().floor() as i32 + 1;
    while real >= 2f64.powi(e) {
        e += 1;
    }
    while real < 2f64.powi(e - 1) {
        e -= 1;
    }
    let mut m = (real * 2f64.powi(31 - e)).round() as i64;
    if m == 1 << 31 {
        m >>= 1;
        e += 1;
    }
    (m, 31 - e)
}

/// `n / 2^s` rounded half away from zero (`s > 0`); `n * 2^-s` otherwise.
pub fn ref_shift(n: i128, s: i32) -> i128 {
    if s <= 0 {
        return n * (1i128 << -s);
    }
    let d = 1i128 << s;
    let q = (2 * n.abs() + d) / (2 * d);
    if n < 0 {
        -q
    } else {
        q
    }
}

fn clampq(v: i128, lo: i32, hi: i32) -> i8 {
    v.clamp(lo as i128, hi as i128) as i8
}

pub fn ref_act_range(act: Activation, qp: QuantParams) -> (i32, i32) {
    match act {
        Activation::None => (-128, 127),
        Activation::Relu6 => {
            let six = (6.0f32 / qp.scale).round() as i64 + qp.zero_point as i64;
            (qp.zero_point.max(-128), six.clamp(-128, 127) as i32)
        }
    }
}

pub fn ref_requant(acc: i64, real: f64, out: QuantParams, lo: i32, hi: i32) -> i8 {
    let acc = acc.clamp(i32::MIN as i64, i32::MAX as i64) as i128;
    let (m, s) = ref_multiplier(real);
    clampq(ref_shift(acc * m as i128, s) + out.zero_point as i128, lo, hi)
}

pub struct QLayer {
    pub x: Vec<i8>,
    pub xq: QuantParams,
    pub w: Vec<i8>,
    pub wq: QuantParams,
    pub bias: Vec<i32>,
    pub out: QuantParams,
    pub act: Activation,
}

impl QLayer {
    fn real(&self) -> f64 {
        self.xq.scale as f64 * self.wq.scale as f64 / self.out.scale as f64
    }
    fn xs(&self, i: usize) -> i64 {
        self.x[i] as i64 - self.xq.zero_point as i64
    }
    fn ws(&self, i: usize) -> i64 {
        self.w[i] as i64 - self.wq.zero_point as i64
    }
}

pub fn conv_i8_ref(l: &QLayer, g: &Geometry, oc: usize) -> Vec<i8> {
    let (oh, ow, _, _) = g.out();
    let (lo, hi) = ref_act_range(l.act, l.out);
    let mut out = vec![0; oh * ow * oc];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let mut acc = 0i64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                            for ic in 0..g.c {
                                acc +=
                                    l.xs((iy * g.w + ix) * g.c + ic) * l.ws(((o * g.kh + ky) * g.kw + kx) * g.c + ic);
                            }
                        }
                    }
                }
                out[(oy * ow + ox) * oc + o] = ref_requant(acc + l.bias[o] as i64, l.real(), l.out, lo, hi);
            }
        }
    }
    out
}

pub fn depthwise_i8_ref(l: &QLayer, g: &Geometry) -> Vec<i8> {
    let (oh, ow, _, _) = g.out();
    let (lo, hi) = ref_act_range(l.act, l.out);
    let mut out = vec![0; oh * ow * g.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..g.c {
                let mut acc = 0i64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                            acc += l.xs((iy * g.w + ix) * g.c + ch) * l.ws((ky * g.kw + kx) * g.c + ch);
                        }
                    }
                }
                out[(oy * ow + ox) * g.c + ch] = ref_requant(acc + l.bias[ch] as i64, l.real(), l.out, lo, hi);
            }
        }
    }
    out
}

pub fn fc_i8_ref(l: &QLayer) -> Vec<i8> {
    let k = l.x.len();
    let (lo, hi) = ref_act_range(l.act, l.out);
    (0..l.bias.len())
        .map(|o| {
            let acc: i64 = (0..k).map(|i| l.xs(i) * l.ws(o * k + i)).sum();
            ref_requant(acc + l.bias[o] as i64, l.real(), l.out, lo, hi)
        })
        .collect()
}

/// Max, or the mean rounded half away from zero, over in-bounds taps.
pub fn pool_i8_ref(x: &[i8], g: &Geometry, max: bool) -> Vec<i8> {
    let (oh, ow, _, _) = g.out();
    let mut out = vec![0; oh * ow * g.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..g.c {
                let mut seen = Vec::new();
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                            seen.push(x[(iy * g.w + ix) * g.c + ch] as i128);
                        }
                    }
                }
                out[(oy * ow + ox) * g.c + ch] = if max {
                    *seen.iter().max().unwrap() as i8
                } else {
                    let n = seen.len() as i128;
                    let s: i128 = seen.iter().sum();
                    let q = (2 * s.abs() + n) / (2 * n);
                    clampq(if s < 0 { -q } else { q }, -128, 127)
                };
            }
        }
    }
    out
}

pub fn add_i8_ref(a: &[i8], aq: QuantParams, b: &[i8], bq: QuantParams, out: QuantParams, act: Activation) -> Vec<i8> {
    let ra = aq.scale as f64 / out.scale as f64;
    let rb = bq.scale as f64 / out.scale as f64;
    let (_, s) = ref_multiplier(ra.max(rb));
    let ma = (ra * 2f64.powi(s)).round() as i128;
    let mb = (rb * 2f64.powi(s)).round() as i128;
    let (lo, hi) = ref_act_range(act, out);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let acc = (x as i128 - aq.zero_point as i128) * ma + (y as i128 - bq.zero_point as i128) * mb;
            clampq(ref_shift(acc, s) + out.zero_point as i128, lo, hi)
        })
        .collect()
}

/// Softmax through a Q20 table of `exp(-d * in_scale)`.
pub fn softmax_i8_ref(x: &[i8], n: usize, xq: QuantParams, out: QuantParams) -> Vec<i8> {
    let one = (1u64 << 20) as f64;
    let table = |d: i32| ((-(d as f64) * xq.scale as f64).exp() * one).round() as u128;
    let recip = ((one / out.scale as f64).round() as u128).max(1);
    let mut res = Vec::new();
    for row in x.chunks(n) {
        let m = *row.iter().max().unwrap() as i32;
        let total: u128 = row.iter().map(|&q| table(m - q as i32)).sum();
        let den = total * (1u128 << 20);
        for &q in row {
            let num = table(m - q as i32) * recip;
            let v = if den == 0 { 0 } else { (2 * num + den) / (2 * den) };
            res.push(clampq(v as i128 + out.zero_point as i128, -128, 127));
        }
    }
    res
}

pub fn rescale_ref(x: &[i8], from: QuantParams, to: QuantParams) -> Vec<i8> {
    if from == to {
        return x.to_vec();
    }
    let (m, s) = ref_multiplier(from.scale as f64 / to.scale as f64);
    x.iter()
        .map(|&q| {
            clampq(
                ref_shift((q as i128 - from.zero_point as i128) * m as i128, s) + to.zero_point as i128,
                -128,
                127,
            )
        })
        .collect()
}

pub fn random_qp(r: &mut FixtureRng, lo: f64, hi: f64) -> QuantParams {
    let scale = (uniform(r, lo.ln(), hi.ln())).exp() as f32;
    QuantParams::new(scale, below(r, 256) as i32 - 128).unwrap()
}

fn random_i8(r: &mut FixtureRng, n: usize) -> Vec<i8> {
    (0..n).map(|_| (below(r, 256) as i32 - 128) as i8).collect()
}

fn it(shape: &[usize], v: Vec<i8>, qp: QuantParams) -> Tensor {
    Tensor::from_i8(shape.to_vec(), v, qp).unwrap()
}

fn bias_tensor(v: Vec<i32>, xq: QuantParams, wq: QuantParams) -> Tensor {
    let qp = QuantParams::new(xq.scale * wq.scale, 0).unwrap();
    Tensor::from_i32(vec![v.len()], v, Some(qp)).unwrap()
}

fn tally(s: &mut KernelSummary, got: &[i8], want: &[i8]) {
    assert_eq!(got.len(), want.len(), "{}: length mismatch", s.kernel);
    s.mismatches += got.iter().zip(want).filter(|(a, b)| a != b).count();
    s.elements += want.len();
    s.interior += want.iter().filter(|&&q| q != -128 && q != 127).count();
}

/// Output scale such that typical accumulators land inside the int8 range.
fn out_qp_for(r: &mut FixtureRng, xq: QuantParams, wq: QuantParams, taps: usize) -> QuantParams {
    let base = xq.scale as f64 * wq.scale as f64 * 128.0 * (taps as f64).sqrt();
    let scale = (base * uniform(r, 0.5, 4.0)) as f32;
    QuantParams::new(scale, below(r, 256) as i32 - 128).unwrap()
}

fn random_layer(r: &mut FixtureRng, nx: usize, nw: usize, nb: usize, taps: usize) -> QLayer {
    let xq = random_qp(r, 0.002, 0.2);
    let wq = random_qp(r, 0.001, 0.05);
    let out = out_qp_for(r, xq, wq, taps);
    let bias = (0..nb).map(|_| below(r, 1 << 13) as i32 - (1 << 12)).collect();
    QLayer {
        x: random_i8(r, nx),
        xq,
        w: random_i8(r, nw),
        wq,
        bias,
        out,
        act: random_act(r),
    }
}

pub fn int8_trials(seed: u64, n: usize) -> Vec<KernelSummary> {
    let mut r = rng(seed);
    let names = [
        "conv2d",
        "depthwise_conv2d",
        "fully_connected",
        "max_pool",
        "avg_pool",
        "relu6",
        "softmax",
        "add",
        "concat",
    ];
    let mut sums: Vec<KernelSummary> = names.iter().map(|n| KernelSummary::new(n)).collect();
    for _ in 0..n {
        let g = Geometry::random(&mut r);
        let shape = [1, g.h, g.w, g.c];
        let nx = g.h * g.w * g.c;

        let oc = 1 + below(&mut r, 5);
        let l = random_layer(&mut r, nx, oc * g.kh * g.kw * g.c, oc, g.kh * g.kw * g.c);
        let y = ops::conv2d(
            &it(&shape, l.x.clone(), l.xq),
            &it(&[oc, g.kh, g.kw, g.c], l.w.clone(), l.wq),
            &bias_tensor(l.bias.clone(), l.xq, l.wq),
            g.conv_attrs(l.act),
            Some(l.out),
        )
        .unwrap();
        tally(&mut sums[0], y.as_i8().unwrap(), &conv_i8_ref(&l, &g, oc));

        let l = random_layer(&mut r, nx, g.kh * g.kw * g.c, g.c, g.kh * g.kw);
        let y = ops::depthwise_conv2d(
            &it(&shape, l.x.clone(), l.xq),
            &it(&[1, g.kh, g.kw, g.c], l.w.clone(), l.wq),
            &bias_tensor(l.bias.clone(), l.xq, l.wq),
            g.conv_attrs(l.act),
            Some(l.out),
        )
        .unwrap();
        tally(&mut sums[1], y.as_i8().unwrap(), &depthwise_i8_ref(&l, &g));

        let l = random_layer(&mut r, nx, oc * nx, oc, nx);
        let y = ops::fully_connected(
            &it(&[1, nx], l.x.clone(), l.xq),
            &it(&[oc, nx], l.w.clone(), l.wq),
            &bias_tensor(l.bias.clone(), l.xq, l.wq),
            l.act,
            Some(l.out),
        )
        .unwrap();
        tally(&mut sums[2], y.as_i8().unwrap(), &fc_i8_ref(&l));

        let xq = random_qp(&mut r, 0.002, 0.2);
        let x = random_i8(&mut r, nx);
        let xt = it(&shape, x.clone(), xq);
        let y = ops::max_pool(&xt, g.pool_attrs()).unwrap();
        tally(&mut sums[3], y.as_i8().unwrap(), &pool_i8_ref(&x, &g, true));
        let y = ops::avg_pool(&xt, g.pool_attrs()).unwrap();
        tally(&mut sums[4], y.as_i8().unwrap(), &pool_i8_ref(&x, &g, false));

        let y = ops::relu6(&xt).unwrap();
        let (lo, hi) = ref_act_range(Activation::Relu6, xq);
        let want: Vec<i8> = x.iter().map(|&q| (q as i32).clamp(lo, hi) as i8).collect();
        tally(&mut sums[5], y.as_i8().unwrap(), &want);

        let sq = random_qp(&mut r, 0.01, 0.5);
        let oq = if below(&mut r, 2) == 0 {
            QuantParams::new(1.0 / 256.0, -128).unwrap()
        } else {
            random_qp(&mut r, 0.001, 0.02)
        };
        let y = ops::softmax(&it(&shape, x.clone(), sq), Some(oq)).unwrap();
        tally(&mut sums[6], y.as_i8().unwrap(), &softmax_i8_ref(&x, g.c, sq, oq));

        let bq = random_qp(&mut r, 0.002, 0.2);
        let b = random_i8(&mut r, nx);
        let oq = random_qp(&mut r, 0.004, 0.4);
        let act = random_act(&mut r);
        let y = ops::add(&xt, &it(&shape, b.clone(), bq), act, Some(oq)).unwrap();
        tally(&mut sums[7], y.as_i8().unwrap(), &add_i8_ref(&x, xq, &b, bq, oq, act));

        let ax = 1 + below(&mut r, 3);
        let mut s2 = shape;
        s2[ax] = 1 + below(&mut r, 4);
        let second = random_i8(&mut r, s2.iter().product());
        let sq2 = if below(&mut r, 3) == 0 {
            xq
        } else {
            random_qp(&mut r, 0.002, 0.2)
        };
        let oq = if below(&mut r, 3) == 0 {
            xq
        } else {
            random_qp(&mut r, 0.002, 0.2)
        };
        let y = ops::concat(&[&xt, &it(&s2, second.clone(), sq2)], ax, Some(oq)).unwrap();
        let want = concat_oracle(
            &[(rescale_ref(&x, xq, oq), shape), (rescale_ref(&second, sq2, oq), s2)],
            ax,
        );
        tally(&mut sums[8], y.as_i8().unwrap(), &want);

        for s in &mut sums {
            s.cases += 1;
        }
    }
    sums
}
