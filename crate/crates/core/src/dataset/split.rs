use std::collections::BTreeMap;
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::DatasetError;

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| DatasetError::InvalidArgument(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub seed: u64,
    /// Ids in shuffled order with their split.
    pub entries: Vec<(String, Split)>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, s)| *s)
    }

    pub fn to_map(&self) -> BTreeMap<String, Split> {
        self.entries.iter().cloned().collect()
    }

    /// (train, val, test) sizes.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for (_, s) in &self.entries {
            c[*s as usize] += 1;
        }
        c
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, s)| *s == split)
            .map(|(i, _)| i.as_str())
    }
}

fn check_ratios(r: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = r.iter().sum();
    if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Ratios(r));
    }
    Ok(())
}

/// train = floor(r0·n), val = floor(r1·n), test = the rest. A tiny epsilon
/// keeps products like 0.7·10 from flooring to 6 through representation
/// error.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let part = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = part(ratios[0]).min(n);
    let val = part(ratios[1]).min(n - train);
    [train, val, n - train - val]
}

/// Seeded Fisher–Yates shuffle on xoshiro256++ (seeded through SplitMix64).
/// The swap index for position `i` is `(next_u64 · (i + 1)) >> 64`.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    shuffle_with(items, &mut rng);
}

fn shuffle_with<T>(items: &mut [T], rng: &mut Xoshiro256PlusPlus) {
    for i in (1..items.len()).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        items.swap(i, j);
    }
}

fn assign(ids: Vec<String>, ratios: [f64; 3], out: &mut Vec<(String, Split)>) {
    let [train, val, _] = split_counts(ids.len(), ratios);
    for (k, id) in ids.into_iter().enumerate() {
        let s = if k < train {
            Split::Train
        } else if k < train + val {
            Split::Val
        } else {
            Split::Test
        };
        out.push((id, s));
    }
}

pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, DatasetError> {
    if ids.is_empty() {
        return Err(DatasetError::EmptyIds);
    }
    check_ratios(ratios)?;
    let mut ids = ids.to_vec();
    shuffle(&mut ids, seed);
    let mut entries = Vec::with_capacity(ids.len());
    assign(ids, ratios, &mut entries);
    Ok(SplitAssignment { seed, entries })
}

/// Applies the count rule within each class separately. `items` are
/// `(id, class)` pairs; classes are processed in sorted order from one
/// random stream.
pub fn split_stratified(
    items: &[(String, String)],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptyIds);
    }
    check_ratios(ratios)?;
    let mut by_class: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, class) in items {
        by_class.entry(class).or_default().push(id.clone());
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(items.len());
    for (_, mut ids) in by_class {
        shuffle_with(&mut ids, &mut rng);
        assign(ids, ratios, &mut entries);
    }
    Ok(SplitAssignment { seed, entries })
}
