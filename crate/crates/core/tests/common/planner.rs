//! Exhaustive arena-placement oracle and a small-graph enumerator.

use rockhunt::fixtures::{below, rng};
use rockhunt::format::{Activation, ConvAttrs, GraphBuilder, ModelGraph, Op, Padding, TensorId};
use rockhunt::planner::ArenaPlan;
use rockhunt::tensor::{DType, Tensor};

/// `(tensor, first, last, size)` computed straight from the layer list.
pub type Life = (TensorId, usize, usize, usize);

pub fn lifetimes(g: &ModelGraph) -> Vec<Life> {
    let order: Vec<_> = g.ordered_layers().collect();
    let end = order.len().saturating_sub(1);
    let mut out = Vec::new();
    for (i, t) in g.tensors.iter().enumerate() {
        if t.is_constant() {
            continue;
        }
        let id = TensorId(i as u32);
        let first = if g.inputs.contains(&id) {
            0
        } else {
            match order.iter().position(|(_, l)| l.output == id) {
                Some(p) => p,
                None => continue,
            }
        };
        let mut last = first;
        for (p, (_, l)) in order.iter().enumerate() {
            if l.inputs.contains(&id) {
                last = last.max(p);
            }
        }
        if g.outputs.contains(&id) {
            last = end;
        }
        out.push((id, first, last, t.shape.iter().product::<usize>() * t.dtype.width()));
    }
    out
}

fn live_together(a: &Life, b: &Life) -> bool {
    a.1 <= b.2 && b.1 <= a.2
}

fn up(x: usize, a: usize) -> usize {
    x.div_ceil(a) * a
}

/// Pairs of simultaneously live tensors whose byte ranges intersect.
pub fn overlaps(lives: &[Life], plan: &ArenaPlan) -> usize {
    let mut bad = 0;
    for (i, a) in lives.iter().enumerate() {
        for b in &lives[i + 1..] {
            if !live_together(a, b) || a.3 == 0 || b.3 == 0 {
                continue;
            }
            let (oa, ob) = (plan.offsets[&a.0], plan.offsets[&b.0]);
            if oa < ob + b.3 && ob < oa + a.3 {
                bad += 1;
            }
        }
    }
    bad
}

/// Smallest achievable peak with `alignment`-aligned offsets.
///
/// Any optimal placement sorted by offset can be rebuilt by putting the
/// tensors, in that order, at their lowest feasible aligned offset, so
/// searching every order with lowest-fit placement finds the optimum.
pub fn optimal_peak(lives: &[Life], alignment: usize) -> usize {
    fn go(
        lives: &[Life],
        a: usize,
        placed: &mut Vec<(usize, usize)>,
        used: &mut [bool],
        peak: usize,
        best: &mut usize,
    ) {
        if peak >= *best {
            return;
        }
        if placed.len() == lives.len() {
            *best = peak;
            return;
        }
        for i in 0..lives.len() {
            if used[i] {
                continue;
            }
            let mut busy: Vec<(usize, usize)> = placed
                .iter()
                .filter(|(j, _)| live_together(&lives[*j], &lives[i]))
                .map(|&(j, off)| (off, off + lives[j].3))
                .collect();
            busy.sort();
            let mut off = 0;
            for &(s, e) in &busy {
                if off + lives[i].3 <= s {
                    break;
                }
                off = off.max(up(e, a));
            }
            used[i] = true;
            placed.push((i, off));
            go(lives, a, placed, used, peak.max(off + lives[i].3), best);
            placed.pop();
            used[i] = false;
        }
    }
    let mut best = usize::MAX;
    go(
        lives,
        alignment.max(1),
        &mut Vec::new(),
        &mut vec![false; lives.len()],
        0,
        &mut best,
    );
    if lives.is_empty() {
        0
    } else {
        best
    }
}

fn pointwise(b: &mut GraphBuilder, x: TensorId, cin: usize, cout: usize, seed: u64) -> TensorId {
    let mut r = rng(seed);
    let w: Vec<f32> = (0..cin * cout).map(|_| below(&mut r, 7) as f32 - 3.0).collect();
    b.weighted(
        Op::Conv2d(ConvAttrs::new(1, 1, Padding::Valid, Activation::None)),
        x,
        Tensor::from_f32(vec![cout, 1, 1, cin], w).unwrap(),
        Tensor::from_f32(vec![cout], vec![0.0; cout]).unwrap(),
        None,
    )
    .unwrap()
}

/// Layer wiring: each layer reads one earlier tensor or concatenates two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wire {
    One(usize),
    Two(usize, usize),
}

/// Every wiring with `layers` layers over one graph input.
pub fn wirings(layers: usize) -> Vec<Vec<Wire>> {
    let mut all = vec![Vec::new()];
    for j in 1..=layers {
        let mut next = Vec::new();
        for w in &all {
            for a in 0..j {
                let mut v: Vec<Wire> = w.clone();
                v.push(Wire::One(a));
                next.push(v);
                for b in a + 1..j {
                    let mut v: Vec<Wire> = w.clone();
                    v.push(Wire::Two(a, b));
                    next.push(v);
                }
            }
        }
        all = next;
    }
    all
}

/// Builds a float graph on a `[1,1,1,c]` input; single-input layers are
/// 1×1 convolutions to a seeded channel count and two-input layers are
/// channel concatenations. Every tensor nobody consumes is an output.
pub fn build(wiring: &[Wire], seed: u64) -> ModelGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new();
    let c0 = 1 + below(&mut r, 12);
    let mut ids = vec![b.input(&[1, 1, 1, c0], DType::F32, None)];
    let mut chans = vec![c0];
    let mut consumed = vec![false];
    for (k, w) in wiring.iter().enumerate() {
        let (id, c) = match *w {
            Wire::One(a) => {
                consumed[a] = true;
                let c = 1 + below(&mut r, 12);
                (pointwise(&mut b, ids[a], chans[a], c, seed ^ (k as u64 + 1)), c)
            }
            Wire::Two(a, bb) => {
                consumed[a] = true;
                consumed[bb] = true;
                let id = b.layer(Op::Concat { axis: 3 }, &[ids[a], ids[bb]], None, None).unwrap();
                (id, chans[a] + chans[bb])
            }
        };
        ids.push(id);
        chans.push(c);
        consumed.push(false);
    }
    let outs: Vec<TensorId> = ids
        .iter()
        .zip(&consumed)
        .filter(|(_, &c)| !c)
        .map(|(&i, _)| i)
        .collect();
    b.finish(&outs).unwrap()
}

/// Straight chain of 1×1 convolutions with seeded widths.
pub fn chain(layers: usize, seed: u64) -> ModelGraph {
    build(&(0..layers).map(Wire::One).collect::<Vec<_>>(), seed)
}
