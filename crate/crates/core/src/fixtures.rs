//! Deterministic synthetic models and corpora.
//!
//! - [`rock_classifier`]: a hand-weighted 3-class CNN for 32×32 tiles that
//!   separates flat soil, textured rocks and striped gray rover parts.
//! - [`tile_corpus`]: tiles of those three kinds.
//! - [`mobilenet_like`]: a randomly initialized inverted-residual network
//!   (about 110k parameters) used for size and speed comparisons.
//! - [`rock_detector`] and [`planted_frame`]: a single-head detector that
//!   fires on bright grid-aligned squares, and frames with such squares.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataset::{AnnotationBox, CLASS_NAMES};
use crate::detect::{AnchorSet, DecodeConfig};
use crate::format::{Activation, ConvAttrs, GraphBuilder, ModelGraph, Op, Padding, PoolAttrs, TensorId};
use crate::tensor::{DType, Tensor};

pub type FixtureRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> FixtureRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform in `[lo, hi)` from the top 53 bits of one draw.
pub fn uniform(rng: &mut FixtureRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)`.
pub fn below(rng: &mut FixtureRng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn f32_tensor(shape: &[usize], v: Vec<f32>) -> Tensor {
    Tensor::from_f32(shape.to_vec(), v).expect("fixture shapes are consistent")
}

/// `n` images of `shape` with values uniform in [0, 1).
pub fn random_images(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| f32_tensor(shape, (0..len).map(|_| uniform(&mut r, 0.0, 1.0) as f32).collect()))
        .collect()
}

// ---------------------------------------------------------------------------
// classifier

pub const TILE: usize = 32;
pub const OTHER: usize = 0;
pub const ROCK: usize = 1;
pub const ROVER: usize = 2;

/// Gain of the texture filters.
const TEXTURE_GAIN: f32 = 8.0;
/// Gain and offset of the grayness filter: `g·(offset − (R − B))`.
const GRAY_GAIN: f32 = 20.0;
const GRAY_OFFSET: f32 = 0.1;
/// Pooled texture energy above which a tile counts as rock.
const ROCK_THRESHOLD: f32 = 0.03;
const ROCK_SLOPE: f32 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTile {
    pub id: String,
    pub label: usize,
    /// `[32, 32, 3]`, values in [0, 1].
    pub image: Tensor,
}

/// Knobs of the synthetic tile generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusParams {
    /// Per-pixel, per-channel soil noise amplitude.
    pub soil_noise: f64,
    /// Rock texture amplitude range; drawn log-uniformly.
    pub rock_amplitude: (f64, f64),
    pub rock_radius: (f64, f64),
    /// Widest rover stripe in pixels; widths are drawn from `1..=max`.
    pub max_stripe: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            soil_noise: 0.002,
            rock_amplitude: (0.008, 0.2),
            rock_radius: (7.0, 13.0),
            max_stripe: 2,
        }
    }
}

fn soil(r: &mut FixtureRng, p: &CorpusParams) -> Vec<f64> {
    let bright = uniform(r, 0.8, 1.1);
    let base = [0.55 * bright, 0.38 * bright, 0.27 * bright];
    let mut v = Vec::with_capacity(TILE * TILE * 3);
    for _ in 0..TILE * TILE {
        for b in base {
            v.push(b + uniform(r, -p.soil_noise, p.soil_noise));
        }
    }
    v
}

fn rock(v: &mut [f64], r: &mut FixtureRng, p: &CorpusParams) {
    let (lo, hi) = p.rock_amplitude;
    let amp = (uniform(r, lo.ln(), hi.ln())).exp();
    let radius = uniform(r, p.rock_radius.0, p.rock_radius.1);
    let cx = uniform(r, 10.0, 22.0);
    let cy = uniform(r, 10.0, 22.0);
    for y in 0..TILE {
        for x in 0..TILE {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= radius * radius {
                let n = uniform(r, -amp, amp);
                for c in 0..3 {
                    v[(y * TILE + x) * 3 + c] += n;
                }
            }
        }
    }
}

fn rover(v: &mut [f64], r: &mut FixtureRng, p: &CorpusParams) {
    let w = 14 + below(r, 11);
    let h = 14 + below(r, 11);
    let x0 = below(r, TILE - w + 1);
    let y0 = below(r, TILE - h + 1);
    let vertical = below(r, 2) == 0;
    let stripe = 1 + below(r, p.max_stripe.max(1));
    let (dark, light) = (uniform(r, 0.15, 0.3), uniform(r, 0.75, 0.9));
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let phase = if vertical { x - x0 } else { y - y0 };
            let g = if (phase / stripe).is_multiple_of(2) {
                dark
            } else {
                light
            };
            for c in 0..3 {
                v[(y * TILE + x) * 3 + c] = g;
            }
        }
    }
}

/// `n` tiles cycling through other, rock, rover; ids are `t000`, `t001`, ….
pub fn tile_corpus(n: usize, seed: u64) -> Vec<SyntheticTile> {
    tile_corpus_with(n, seed, &CorpusParams::default())
}

pub fn tile_corpus_with(n: usize, seed: u64, p: &CorpusParams) -> Vec<SyntheticTile> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = [OTHER, ROCK, ROVER][i % 3];
            let mut v = soil(&mut r, p);
            match label {
                ROCK => rock(&mut v, &mut r, p),
                ROVER => rover(&mut v, &mut r, p),
                _ => {}
            }
            let px = v.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
            SyntheticTile {
                id: format!("t{i:03}"),
                label,
                image: f32_tensor(&[TILE, TILE, 3], px),
            }
        })
        .collect()
}

pub fn class_names() -> [&'static str; 3] {
    CLASS_NAMES
}

/// Hand-weighted classifier over `[1, 32, 32, 3]` float tiles.
///
/// 1. 3×3 valid conv, relu6: `+k·lap(gray)`, `−k·lap(gray)` and grayness.
/// 2. 30×30 average pool: texture energy halves `t0`, `t1` and gray share `g`.
/// 3. fc, relu6: `h_rock = s·(t0 + t1 − θ)`, `h_rover = 10·g − 2`.
/// 4. fc: logits other `1.5`, rock `h_rock − 2·h_rover`, rover `2·h_rover`.
/// 5. softmax.
pub fn rock_classifier() -> ModelGraph {
    let mut b = GraphBuilder::new();
    let x = b.input(&[1, TILE, TILE, 3], DType::F32, None);

    let lap = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];
    let mut w = vec![0.0f32; 3 * 3 * 3 * 3];
    let idx = |o: usize, ky: usize, kx: usize, c: usize| ((o * 3 + ky) * 3 + kx) * 3 + c;
    for ky in 0..3 {
        for kx in 0..3 {
            for c in 0..3 {
                let v = TEXTURE_GAIN * lap[ky][kx] / 3.0;
                w[idx(0, ky, kx, c)] = v;
                w[idx(1, ky, kx, c)] = -v;
            }
        }
    }
    w[idx(2, 1, 1, 0)] = -GRAY_GAIN;
    w[idx(2, 1, 1, 2)] = GRAY_GAIN;
    let bias = vec![0.0, 0.0, GRAY_GAIN * GRAY_OFFSET];
    let conv = b
        .weighted(
            Op::Conv2d(ConvAttrs::new(3, 1, Padding::Valid, Activation::Relu6)),
            x,
            f32_tensor(&[3, 3, 3, 3], w),
            f32_tensor(&[3], bias),
            None,
        )
        .expect("valid conv");
    let pooled = b
        .simple(Op::AvgPool(PoolAttrs::new(TILE - 2, 1, Padding::Valid)), conv)
        .expect("valid pool");
    let fc1 = b
        .weighted(
            Op::FullyConnected {
                activation: Activation::Relu6,
            },
            pooled,
            f32_tensor(&[2, 3], vec![ROCK_SLOPE, ROCK_SLOPE, 0.0, 0.0, 0.0, 10.0]),
            f32_tensor(&[2], vec![-ROCK_SLOPE * ROCK_THRESHOLD, -2.0]),
            None,
        )
        .expect("valid fc");
    let logits = b
        .weighted(
            Op::FullyConnected {
                activation: Activation::None,
            },
            fc1,
            f32_tensor(&[3, 2], vec![0.0, 0.0, 1.0, -2.0, 0.0, 2.0]),
            f32_tensor(&[3], vec![1.5, 0.0, 0.0]),
            None,
        )
        .expect("valid fc");
    let probs = b.simple(Op::Softmax, logits).expect("softmax");
    b.finish(&[probs]).expect("classifier validates")
}

// ---------------------------------------------------------------------------
// inverted-residual network

pub const MOBILE_INPUT: usize = 96;

struct Init {
    rng: FixtureRng,
}

impl Init {
    /// He-uniform weights for `fan_in` inputs.
    fn weights(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let lim = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        f32_tensor(
            shape,
            (0..n).map(|_| uniform(&mut self.rng, -lim, lim) as f32).collect(),
        )
    }

    fn bias(&mut self, n: usize) -> Tensor {
        f32_tensor(
            &[n],
            (0..n).map(|_| uniform(&mut self.rng, -0.05, 0.05) as f32).collect(),
        )
    }
}

fn pointwise(b: &mut GraphBuilder, init: &mut Init, x: TensorId, cin: usize, cout: usize, act: Activation) -> TensorId {
    let w = init.weights(&[cout, 1, 1, cin], cin);
    let bias = init.bias(cout);
    b.weighted(Op::Conv2d(ConvAttrs::new(1, 1, Padding::Same, act)), x, w, bias, None)
        .expect("pointwise conv")
}

fn inverted_residual(
    b: &mut GraphBuilder,
    init: &mut Init,
    x: TensorId,
    cin: usize,
    expand: usize,
    cout: usize,
    stride: usize,
) -> TensorId {
    let hidden = cin * expand;
    let e = pointwise(b, init, x, cin, hidden, Activation::Relu6);
    let dw_w = init.weights(&[1, 3, 3, hidden], 9);
    let dw_b = init.bias(hidden);
    let d = b
        .weighted(
            Op::DepthwiseConv2d(ConvAttrs::new(3, stride, Padding::Same, Activation::Relu6)),
            e,
            dw_w,
            dw_b,
            None,
        )
        .expect("depthwise conv");
    let p = pointwise(b, init, d, hidden, cout, Activation::None);
    if stride == 1 && cin == cout {
        b.layer(
            Op::Add {
                activation: Activation::None,
            },
            &[x, p],
            None,
            None,
        )
        .expect("residual add")
    } else {
        p
    }
}

/// Seeded inverted-residual classifier on `[1, 96, 96, 3]` inputs with
/// three outputs.
pub fn mobilenet_like(seed: u64) -> ModelGraph {
    let mut init = Init { rng: rng(seed) };
    let mut b = GraphBuilder::new();
    let x = b.input(&[1, MOBILE_INPUT, MOBILE_INPUT, 3], DType::F32, None);
    let w = init.weights(&[16, 3, 3, 3], 27);
    let bias = init.bias(16);
    let mut h = b
        .weighted(
            Op::Conv2d(ConvAttrs::new(3, 2, Padding::Same, Activation::Relu6)),
            x,
            w,
            bias,
            None,
        )
        .expect("stem conv");
    h = inverted_residual(&mut b, &mut init, h, 16, 4, 16, 1);
    h = inverted_residual(&mut b, &mut init, h, 16, 6, 32, 2);
    h = inverted_residual(&mut b, &mut init, h, 32, 4, 32, 1);
    h = inverted_residual(&mut b, &mut init, h, 32, 6, 64, 2);
    h = inverted_residual(&mut b, &mut init, h, 64, 6, 64, 1);
    h = pointwise(&mut b, &mut init, h, 64, 256, Activation::Relu6);
    let side = MOBILE_INPUT / 8;
    h = b
        .simple(Op::AvgPool(PoolAttrs::new(side, 1, Padding::Valid)), h)
        .expect("global pool");
    let w = init.weights(&[3, 256], 256);
    let bias = init.bias(3);
    let logits = b
        .weighted(
            Op::FullyConnected {
                activation: Activation::None,
            },
            h,
            w,
            bias,
            None,
        )
        .expect("classifier head");
    let probs = b.simple(Op::Softmax, logits).expect("softmax");
    b.finish(&[probs]).expect("network validates")
}

// ---------------------------------------------------------------------------
// detector

pub const FRAME: usize = 416;
pub const GRID: usize = 13;
pub const CELL: usize = FRAME / GRID;
const OBJ_GAIN: f32 = 40.0;

/// Gray conversion, 32×32 average pooling, then a 1×1 conv producing
/// `[tx, ty, tw, th, objectness, rock]` per cell: zero offsets, objectness
/// `40·(mean − 0.5)` and a large constant class score.
pub fn rock_detector() -> ModelGraph {
    let mut b = GraphBuilder::new();
    let x = b.input(&[1, FRAME, FRAME, 3], DType::F32, None);
    let gray = b
        .weighted(
            Op::Conv2d(ConvAttrs::new(1, 1, Padding::Valid, Activation::None)),
            x,
            f32_tensor(&[1, 1, 1, 3], vec![1.0 / 3.0; 3]),
            f32_tensor(&[1], vec![0.0]),
            None,
        )
        .expect("gray conv");
    let cells = b
        .simple(Op::AvgPool(PoolAttrs::new(CELL, CELL, Padding::Valid)), gray)
        .expect("cell pool");
    let mut w = vec![0.0f32; 6];
    w[4] = OBJ_GAIN;
    let bias = vec![0.0, 0.0, 0.0, 0.0, -OBJ_GAIN * 0.5, 10.0];
    let head = b
        .weighted(
            Op::Conv2d(ConvAttrs::new(1, 1, Padding::Valid, Activation::None)),
            cells,
            f32_tensor(&[6, 1, 1, 1], w),
            f32_tensor(&[6], bias),
            None,
        )
        .expect("head conv");
    b.finish(&[head]).expect("detector validates")
}

pub fn detector_anchors() -> AnchorSet {
    AnchorSet::cell_sized(GRID, GRID, FRAME as f64, FRAME as f64)
}

pub fn detector_config() -> DecodeConfig {
    DecodeConfig::new(FRAME as f64, FRAME as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFrame {
    pub id: String,
    /// `[416, 416, 3]`.
    pub image: Tensor,
    pub boxes: Vec<AnnotationBox>,
}

/// Dark frame with `count` bright cell-sized squares on distinct,
/// non-adjacent grid cells (at most 85).
pub fn planted_frame(id: &str, count: usize, seed: u64) -> PlantedFrame {
    let mut r = rng(seed);
    let mut cells: Vec<(usize, usize)> = (0..GRID)
        .flat_map(|y| (0..GRID).map(move |x| (x, y)))
        .filter(|(x, y)| (x + y) % 2 == 0)
        .collect();
    assert!(count <= cells.len(), "at most {} planted rocks per frame", cells.len());
    crate::dataset::shuffle(&mut cells, r.next_u64());
    cells.truncate(count);
    cells.sort_unstable_by_key(|&(x, y)| (y, x));
    let mut v = vec![0.0f32; FRAME * FRAME * 3];
    for px in v.iter_mut() {
        *px = uniform(&mut r, 0.05, 0.15) as f32;
    }
    let mut boxes = Vec::new();
    for &(cx, cy) in &cells {
        let level = uniform(&mut r, 0.8, 0.95) as f32;
        for y in cy * CELL..(cy + 1) * CELL {
            for x in cx * CELL..(cx + 1) * CELL {
                v[(y * FRAME + x) * 3..(y * FRAME + x) * 3 + 3].fill(level);
            }
        }
        let s = CELL as f64 / FRAME as f64;
        boxes.push(AnnotationBox {
            class_id: 0,
            cx: (cx as f64 + 0.5) * s,
            cy: (cy as f64 + 0.5) * s,
            w: s,
            h: s,
        });
    }
    PlantedFrame {
        id: id.to_string(),
        image: f32_tensor(&[FRAME, FRAME, 3], v),
        boxes,
    }
}

/// One frame per entry of `counts`, ids `f000`, `f001`, ….
pub fn planted_corpus(counts: &[usize], seed: u64) -> Vec<PlantedFrame> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| planted_frame(&format!("f{i:03}"), c, seed.wrapping_add(i as u64)))
        .collect()
}
