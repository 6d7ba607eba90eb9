#![allow(dead_code)]

pub mod kernels;
pub mod planner;

use std::path::Path;

use rockhunt::dataset::AnnotationBox;
use rockhunt::detect::BBox;
use rockhunt::fixtures::{below, random_images, rng, uniform, FixtureRng};
use rockhunt::format::{Activation, ConvAttrs, GraphBuilder, ModelGraph, Op, Padding, PoolAttrs, TensorId};
use rockhunt::quantizer::{calibrate, quantize_model};
use rockhunt::tensor::{DType, Tensor};

// ---------------------------------------------------------------------------
// detection

/// Plain O(n²) suppression: repeatedly scan for the best undecided box,
/// keep it, and strike every same-class box overlapping it.
pub fn brute_nms(boxes: &[BBox], thresh: f64) -> Vec<BBox> {
    fn ahead(a: &BBox, b: &BBox) -> bool {
        a.confidence > b.confidence
            || (a.confidence == b.confidence && (a.x_min < b.x_min || (a.x_min == b.x_min && a.y_min < b.y_min)))
    }
    fn overlap(a: &BBox, b: &BBox) -> f64 {
        let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
        let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
        if w <= 0.0 || h <= 0.0 {
            return 0.0;
        }
        let inter = w * h;
        let area = |b: &BBox| (b.x_max - b.x_min) * (b.y_max - b.y_min);
        inter / (area(a) + area(b) - inter)
    }
    let n = boxes.len();
    let mut open = vec![true; n];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if open[i] && best.is_none_or(|b| ahead(&boxes[i], &boxes[b])) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        open[b] = false;
        kept.push(boxes[b]);
        for i in 0..n {
            if open[i] && boxes[i].class_id == boxes[b].class_id && overlap(&boxes[i], &boxes[b]) >= thresh {
                open[i] = false;
            }
        }
    }
    kept
}

/// Up to `max_n` boxes on a 416-pixel frame with up to three classes,
/// clustered enough that suppression actually happens.
pub fn random_boxes(r: &mut FixtureRng, max_n: usize) -> Vec<BBox> {
    let n = below(r, max_n + 1);
    let centers: Vec<(f64, f64)> = (0..1 + below(r, 12))
        .map(|_| (uniform(r, 0.0, 416.0), uniform(r, 0.0, 416.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centers[below(r, centers.len())];
            let x = cx + uniform(r, -30.0, 30.0);
            let y = cy + uniform(r, -30.0, 30.0);
            let w = uniform(r, 4.0, 80.0);
            let h = uniform(r, 4.0, 80.0);
            BBox::new(x, y, x + w, y + h, below(r, 3), uniform(r, 0.0, 1.0))
        })
        .collect()
}

/// Bitwise identity key for set comparison.
pub fn box_key(b: &BBox) -> (u64, u64, u64, u64, usize, u64) {
    (
        b.x_min.to_bits(),
        b.y_min.to_bits(),
        b.x_max.to_bits(),
        b.y_max.to_bits(),
        b.class_id,
        b.confidence.to_bits(),
    )
}

/// Writes a detection label corpus: `files` label files holding `boxes`
/// boxes in total, spread as evenly as possible.
pub fn write_detection_corpus(dir: &Path, files: usize, boxes: usize, seed: u64) {
    let mut r = rng(seed);
    for i in 0..files {
        let n = boxes / files + usize::from(i < boxes % files);
        let mut text = String::new();
        for _ in 0..n {
            let w = uniform(&mut r, 0.02, 0.2);
            let h = uniform(&mut r, 0.02, 0.2);
            let b = AnnotationBox {
                class_id: 0,
                cx: uniform(&mut r, w / 2.0, 1.0 - w / 2.0),
                cy: uniform(&mut r, h / 2.0, 1.0 - h / 2.0),
                w,
                h,
            };
            text.push_str(&b.to_line());
            text.push('\n');
        }
        std::fs::write(dir.join(format!("d{i:03}.txt")), text).unwrap();
    }
}

// ---------------------------------------------------------------------------
// dataset

/// Tile origins along one axis by stepping until the extent is covered.
pub fn enumerate_axis(extent: usize, tile: usize, stride: usize, pad: bool) -> Vec<usize> {
    let mut v = Vec::new();
    let mut x = 0;
    while x < extent {
        if pad || x + tile <= extent {
            v.push(x);
        }
        x += stride;
    }
    v
}

/// Floor rule in exact integer arithmetic: 70n/100 and 15n/100.
pub fn integer_counts(n: usize) -> [usize; 3] {
    let train = 70 * n / 100;
    let val = 15 * n / 100;
    [train, val, n - train - val]
}

// ---------------------------------------------------------------------------
// evaluation

/// Counts per truth row, in `CLASS_NAMES` order (other, rock, rover), 1000
/// examples each. Printed as rock, rover, other they give rock (99.0, 1.0,
/// 0.0), rover (5.5, 94.5, 0.0) and other (0.0, 1.2, 98.8). The target
/// other row adds up to 100.1, so its off-diagonal cell is one tenth low;
/// the diagonal is exact.
pub const REFERENCE_COUNTS: [[usize; 3]; 3] = [
    // other: -> other, rock, rover
    [988, 0, 12],
    // rock
    [0, 990, 10],
    // rover
    [0, 55, 945],
];

/// Target row percentages, rows and columns in rock, rover, other order.
pub const REFERENCE_PERCENT: [[f64; 3]; 3] = [[99.0, 1.0, 0.0], [5.5, 94.5, 0.0], [0.0, 1.3, 98.8]];

/// Truth and prediction sequences realising [`REFERENCE_COUNTS`], interleaved.
pub fn reference_predictions() -> (Vec<&'static str>, Vec<&'static str>) {
    let names = rockhunt::dataset::CLASS_NAMES;
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, row) in REFERENCE_COUNTS.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                truth.push(names[t]);
                pred.push(names[p]);
            }
        }
    }
    // deterministic interleave so order carries no information
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    rockhunt::dataset::shuffle(&mut idx, 4);
    (
        idx.iter().map(|&i| truth[i]).collect(),
        idx.iter().map(|&i| pred[i]).collect(),
    )
}

// ---------------------------------------------------------------------------
// graphs

fn ft(shape: &[usize], v: Vec<f32>) -> Tensor {
    Tensor::from_f32(shape.to_vec(), v).unwrap()
}

fn small(r: &mut FixtureRng, n: usize, amp: f64) -> Vec<f32> {
    (0..n).map(|_| uniform(r, -amp, amp) as f32).collect()
}

fn act(r: &mut FixtureRng) -> Activation {
    if below(r, 2) == 0 {
        Activation::None
    } else {
        Activation::Relu6
    }
}

/// Random valid float graph over a small NHWC input mixing every operator
/// kind. Ends in reshape → fully connected → softmax about half the time.
pub fn random_float_graph(seed: u64) -> ModelGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new();
    let (h, w, c) = (2 + below(&mut r, 7), 2 + below(&mut r, 7), 1 + below(&mut r, 4));
    let x = b.input(&[1, h, w, c], DType::F32, None);
    let mut live: Vec<TensorId> = vec![x];
    let shape = |b: &GraphBuilder, id: TensorId| b.decl(id).shape.clone();
    for _ in 0..1 + below(&mut r, 6) {
        let cur = *live.last().unwrap();
        let s = shape(&b, cur);
        let (sh, sw, sc) = (s[1], s[2], s[3]);
        let k = 1 + below(&mut r, 3);
        let stride = 1 + below(&mut r, 2);
        let pad = if below(&mut r, 2) == 0 || sh < k || sw < k {
            Padding::Same
        } else {
            Padding::Valid
        };
        let next = match below(&mut r, 8) {
            0 => {
                let oc = 1 + below(&mut r, 6);
                b.weighted(
                    Op::Conv2d(ConvAttrs::new(k, stride, pad, act(&mut r))),
                    cur,
                    ft(&[oc, k, k, sc], small(&mut r, oc * k * k * sc, 0.8)),
                    ft(&[oc], small(&mut r, oc, 0.3)),
                    None,
                )
            }
            1 => b.weighted(
                Op::DepthwiseConv2d(ConvAttrs::new(k, stride, pad, act(&mut r))),
                cur,
                ft(&[1, k, k, sc], small(&mut r, k * k * sc, 0.8)),
                ft(&[sc], small(&mut r, sc, 0.3)),
                None,
            ),
            2 => b.simple(Op::MaxPool(PoolAttrs::new(k, stride, pad)), cur),
            3 => b.simple(Op::AvgPool(PoolAttrs::new(k, stride, pad)), cur),
            4 => b.simple(Op::Relu6, cur),
            5 => {
                let same: Vec<TensorId> = live.iter().copied().filter(|&t| shape(&b, t) == s).collect();
                let other = same[below(&mut r, same.len())];
                b.layer(
                    Op::Add {
                        activation: act(&mut r),
                    },
                    &[cur, other],
                    None,
                    None,
                )
            }
            6 => {
                let fit: Vec<TensorId> = live.iter().copied().filter(|&t| shape(&b, t)[..3] == s[..3]).collect();
                let other = fit[below(&mut r, fit.len())];
                b.layer(Op::Concat { axis: 3 }, &[cur, other], None, None)
            }
            _ => b.simple(Op::Softmax, cur),
        }
        .unwrap();
        live.push(next);
    }
    let mut out = *live.last().unwrap();
    if below(&mut r, 2) == 0 {
        let n: usize = shape(&b, out).iter().product();
        let flat = b.layer(Op::Reshape, &[out], None, Some(&[1, n])).unwrap();
        let classes = 2 + below(&mut r, 3);
        let fc = b
            .weighted(
                Op::FullyConnected {
                    activation: Activation::None,
                },
                flat,
                ft(&[classes, n], small(&mut r, classes * n, 0.5)),
                ft(&[classes], small(&mut r, classes, 0.2)),
                None,
            )
            .unwrap();
        out = b.simple(Op::Softmax, fc).unwrap();
    }
    b.finish(&[out]).unwrap()
}

/// [`random_float_graph`] quantized against a few random inputs.
pub fn random_int8_graph(seed: u64) -> ModelGraph {
    let g = random_float_graph(seed);
    let shape = g.tensor(g.inputs[0]).shape.clone();
    let stats = calibrate(&g, &random_images(&shape, 3, seed ^ 0x5eed)).unwrap();
    quantize_model(&g, &stats).unwrap()
}

/// Either kind, chosen by seed parity.
pub fn random_graph(seed: u64) -> ModelGraph {
    if seed.is_multiple_of(2) {
        random_float_graph(seed)
    } else {
        random_int8_graph(seed)
    }
}

/// One random corruption: bit flip, byte overwrite, u32 overwrite,
/// truncation, insertion, deletion or a duplicated slice.
pub fn mutate(r: &mut FixtureRng, bytes: &[u8]) -> Vec<u8> {
    let mut m = bytes.to_vec();
    if m.is_empty() {
        return vec![below(r, 256) as u8];
    }
    let at = below(r, m.len());
    match below(r, 7) {
        0 => m[at] ^= 1 << below(r, 8),
        1 => m[at] = below(r, 256) as u8,
        2 => {
            let v = [0u32, 1, 2, 3, 99, 255, u32::MAX, 1 << 31][below(r, 8)];
            let at = at.min(m.len().saturating_sub(4));
            let end = (at + 4).min(m.len());
            m[at..end].copy_from_slice(&v.to_le_bytes()[..end - at]);
        }
        3 => m.truncate(at),
        4 => m.insert(at, below(r, 256) as u8),
        5 => {
            m.remove(at);
        }
        _ => {
            let len = 1 + below(r, 16).min(m.len() - at - 1);
            let piece = m[at..at + len].to_vec();
            let to = below(r, m.len());
            m.splice(to..to, piece);
        }
    }
    m
}
