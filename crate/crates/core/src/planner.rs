//! Static activation-memory planning.
//!
//! Every non-constant tensor gets a byte offset in one scratch arena such
//! that tensors alive at the same time never overlap. Constants live in ROM
//! and are not placed. Graph inputs count as arena tensors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::format::{ModelGraph, TensorId};

/// Default offset alignment in bytes.
pub const DEFAULT_ALIGNMENT: usize = 16;

/// Lifetime of one tensor in execution-order positions, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LivenessInterval {
    pub tensor: TensorId,
    pub first: usize,
    pub last: usize,
    pub size: usize,
}

impl LivenessInterval {
    pub fn overlaps(&self, other: &LivenessInterval) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArenaPlan {
    pub offsets: BTreeMap<TensorId, usize>,
    pub peak_bytes: usize,
    pub intervals: Vec<LivenessInterval>,
    pub alignment: usize,
}

/// One interval per non-constant tensor. Graph inputs are live from
/// position 0, graph outputs through the final layer, and every tensor
/// until its last consumer has run.
pub fn liveness(g: &ModelGraph) -> Vec<LivenessInterval> {
    let n_layers = g.layers.len();
    let final_pos = n_layers.saturating_sub(1);
    let mut first: Vec<Option<usize>> = vec![None; g.tensors.len()];
    let mut last = vec![0usize; g.tensors.len()];
    for &id in &g.inputs {
        first[id.index()] = Some(0);
    }
    for (pos, (_, layer)) in g.ordered_layers().enumerate() {
        first[layer.output.index()] = Some(pos);
        last[layer.output.index()] = last[layer.output.index()].max(pos);
        for id in &layer.inputs {
            last[id.index()] = last[id.index()].max(pos);
        }
    }
    for &id in &g.outputs {
        last[id.index()] = final_pos;
    }
    g.tensors
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_constant())
        .filter_map(|(i, t)| {
            let f = first[i]?;
            Some(LivenessInterval {
                tensor: TensorId(i as u32),
                first: f,
                last: last[i].max(f),
                size: t.size_bytes(),
            })
        })
        .collect()
}

fn align_up(x: usize, a: usize) -> usize {
    x.div_ceil(a) * a
}

/// Plans the graph's arena with the default 16-byte alignment.
pub fn plan_arena(g: &ModelGraph) -> ArenaPlan {
    plan_intervals(&liveness(g), DEFAULT_ALIGNMENT)
}

/// Placement attempts the refinement search may spend per plan.
pub const SEARCH_BUDGET: usize = 200_000;

/// Greedy best-fit placement, largest tensors first (ties by tensor id),
/// then a bounded search for a smaller peak.
///
/// Each tensor goes into the smallest gap between already-placed tensors
/// that are alive at the same time, if one is large enough; otherwise just
/// above the highest of them. The greedy plan is then used as the bound
/// for a depth-first search over placement orders, each tensor dropped to
/// its lowest free aligned offset. Small graphs are searched to the end and
/// get an optimal plan; large ones keep the best plan found within
/// [`SEARCH_BUDGET`] placements. Both stages are deterministic.
pub fn plan_intervals(intervals: &[LivenessInterval], alignment: usize) -> ArenaPlan {
    let alignment = alignment.max(1);
    let conflicts: Vec<Vec<usize>> = (0..intervals.len())
        .map(|i| {
            (0..intervals.len())
                .filter(|&j| j != i && intervals[i].overlaps(&intervals[j]))
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| {
        intervals[b]
            .size
            .cmp(&intervals[a].size)
            .then(intervals[a].tensor.cmp(&intervals[b].tensor))
    });
    let greedy = best_fit(intervals, &conflicts, &order, alignment);
    let greedy_peak = peak_of(intervals, &greedy);
    let mut search = Search {
        intervals,
        conflicts: &conflicts,
        order: &order,
        alignment,
        offsets: vec![None; intervals.len()],
        best: greedy,
        best_peak: greedy_peak,
        floor: live_bytes_lower_bound(intervals),
        budget: SEARCH_BUDGET,
    };
    if search.best_peak > search.floor {
        search.descend(intervals.len(), 0);
    }
    let offsets = intervals
        .iter()
        .zip(&search.best)
        .map(|(i, &o)| (i.tensor, o))
        .collect();
    ArenaPlan {
        offsets,
        peak_bytes: search.best_peak,
        intervals: intervals.to_vec(),
        alignment,
    }
}

fn peak_of(intervals: &[LivenessInterval], offsets: &[usize]) -> usize {
    intervals
        .iter()
        .zip(offsets)
        .map(|(i, o)| o + i.size)
        .max()
        .unwrap_or(0)
}

/// Occupied `[start, end)` ranges of the placed tensors among `conflicts`.
fn busy(intervals: &[LivenessInterval], conflicts: &[usize], offsets: &[Option<usize>]) -> Vec<(usize, usize)> {
    let mut busy: Vec<(usize, usize)> = conflicts
        .iter()
        .filter_map(|&j| offsets[j].map(|o| (o, o + intervals[j].size)))
        .collect();
    busy.sort_unstable();
    busy
}

fn best_fit(intervals: &[LivenessInterval], conflicts: &[Vec<usize>], order: &[usize], alignment: usize) -> Vec<usize> {
    let mut offsets: Vec<Option<usize>> = vec![None; intervals.len()];
    for &i in order {
        let size = intervals[i].size;
        let mut best: Option<(usize, usize)> = None; // (gap size, offset)
        let mut cursor = 0;
        for (start, end) in busy(intervals, &conflicts[i], &offsets) {
            let candidate = align_up(cursor, alignment);
            if start >= candidate && start - candidate >= size {
                let gap = start - candidate;
                if best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, candidate));
                }
            }
            cursor = cursor.max(end);
        }
        offsets[i] = Some(match best {
            Some((_, off)) => off,
            None => align_up(cursor, alignment),
        });
    }
    offsets.into_iter().map(|o| o.unwrap_or(0)).collect()
}

fn lowest_fit(size: usize, busy: &[(usize, usize)], alignment: usize) -> usize {
    let mut cursor = 0;
    for &(start, end) in busy {
        if align_up(cursor, alignment) + size <= start {
            break;
        }
        cursor = cursor.max(end);
    }
    align_up(cursor, alignment)
}

/// Any valid plan, replayed in order of offset with every tensor dropped
/// to its lowest free slot, ends up no higher than before. So searching all
/// orders with lowest-fit placement reaches an optimal plan.
struct Search<'a> {
    intervals: &'a [LivenessInterval],
    conflicts: &'a [Vec<usize>],
    order: &'a [usize],
    alignment: usize,
    offsets: Vec<Option<usize>>,
    best: Vec<usize>,
    best_peak: usize,
    floor: usize,
    budget: usize,
}

impl Search<'_> {
    fn descend(&mut self, remaining: usize, peak: usize) {
        if remaining == 0 {
            if peak < self.best_peak {
                self.best_peak = peak;
                self.best = self.offsets.iter().map(|o| o.unwrap_or(0)).collect();
            }
            return;
        }
        for &i in self.order {
            if self.offsets[i].is_some() {
                continue;
            }
            if self.budget == 0 || self.best_peak <= self.floor {
                return;
            }
            self.budget -= 1;
            let size = self.intervals[i].size;
            let busy = busy(self.intervals, &self.conflicts[i], &self.offsets);
            let off = lowest_fit(size, &busy, self.alignment);
            let top = peak.max(off + size);
            if top >= self.best_peak {
                continue;
            }
            self.offsets[i] = Some(off);
            self.descend(remaining - 1, top);
            self.offsets[i] = None;
        }
    }
}

/// Largest total size of tensors alive at one position; a lower bound on
/// any valid plan's peak.
pub fn live_bytes_lower_bound(intervals: &[LivenessInterval]) -> usize {
    let end = intervals.iter().map(|i| i.last).max().unwrap_or(0);
    (0..=end)
        .map(|p| {
            intervals
                .iter()
                .filter(|i| i.first <= p && p <= i.last)
                .map(|i| i.size)
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0)
}

impl ArenaPlan {
    /// Pairs of tensors that are alive together but share bytes.
    pub fn overlap_violations(&self) -> Vec<(TensorId, TensorId)> {
        let mut bad = Vec::new();
        for (i, a) in self.intervals.iter().enumerate() {
            for b in &self.intervals[i + 1..] {
                if !a.overlaps(b) || a.size == 0 || b.size == 0 {
                    continue;
                }
                let (oa, ob) = (self.offsets[&a.tensor], self.offsets[&b.tensor]);
                if oa < ob + b.size && ob < oa + a.size {
                    bad.push((a.tensor, b.tensor));
                }
            }
        }
        bad
    }

    /// Text table: tensor id, offset, size, live interval.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:>10}  {:>10}  {:>9}", "tensor", "offset", "size", "live");
        let mut rows: Vec<_> = self.intervals.iter().collect();
        rows.sort_by_key(|i| (self.offsets[&i.tensor], i.tensor));
        for i in rows {
            let _ = writeln!(
                s,
                "{:>6}  {:>10}  {:>10}  {:>4}..{:<4}",
                i.tensor.0, self.offsets[&i.tensor], i.size, i.first, i.last
            );
        }
        let _ = writeln!(s, "peak {} bytes", self.peak_bytes);
        s
    }
}
