//! Classifier scoring and model benchmarking.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::engine::{argmax, prepare_input, ExecError, Interpreter};
use crate::format::{rom_size, ModelGraph};
use crate::planner::plan_arena;
use crate::tensor::{DType, Tensor};

pub const DEFAULT_REPS: usize = 10;
pub const WARMUP_RUNS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{truth} truth labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} outside the {classes} declared classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error("unknown class name {0:?}")]
    UnknownName(String),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("at least 3 timed repetitions are required, got {0}")]
    TooFewReps(usize),
    #[error("model produced no output")]
    NoOutput,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: &[&str]) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        let total = self.total();
        if total == 0 {
            return Err(EvalError::Empty);
        }
        let trace: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Each row as percentages of its own total; empty rows are all zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// Mean of the per-class recalls, i.e. accuracy with every truth row
    /// weighted equally. Rows without examples are skipped.
    pub fn balanced_accuracy(&self) -> Result<f64, EvalError> {
        let pct = self.row_percentages();
        let rows: Vec<f64> = (0..pct.len())
            .filter(|&i| self.counts[i].iter().sum::<u64>() > 0)
            .map(|i| pct[i][i] / 100.0)
            .collect();
        if rows.is_empty() {
            return Err(EvalError::Empty);
        }
        Ok(rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Text table of row percentages, truth down the side.
    pub fn render(&self) -> String {
        let w = self.class_names.iter().map(|s| s.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:w$}", "");
        for n in &self.class_names {
            let _ = write!(s, "  {n:>w$}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(self.row_percentages()) {
            let _ = write!(s, "{name:w$}");
            for p in row {
                let _ = write!(s, "  {:>w$}", format!("{p:.1}%"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], class_names: &[&str]) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let k = class_names.len();
    let mut cm = ConfusionMatrix::new(class_names);
    for (&t, &p) in truth.iter().zip(pred) {
        for label in [t, p] {
            if label >= k {
                return Err(EvalError::UnknownLabel { label, classes: k });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Like [`confusion`] with labels given by class name.
pub fn confusion_by_name(truth: &[&str], pred: &[&str], class_names: &[&str]) -> Result<ConfusionMatrix, EvalError> {
    let index = |s: &&str| {
        class_names
            .iter()
            .position(|c| c == s)
            .ok_or_else(|| EvalError::UnknownName(s.to_string()))
    };
    let t = truth.iter().map(index).collect::<Result<Vec<_>, _>>()?;
    let p = pred.iter().map(index).collect::<Result<Vec<_>, _>>()?;
    confusion(&t, &p, class_names)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub model_name: String,
    pub inference_ms: f64,
    pub peak_ram_bytes: usize,
    pub rom_bytes: usize,
    pub accuracy: Option<f64>,
}

/// Median; the mean of the middle pair for even counts.
pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Predicted class for each example (argmax of the first output, ties to
/// the lower index). Examples are scored in parallel.
pub fn predict_all(g: &ModelGraph, images: &[Tensor]) -> Result<Vec<usize>, EvalError> {
    let interp = Interpreter::new(g);
    images
        .par_iter()
        .map(|img| {
            let x = prepare_input(g, img)?;
            let (outs, _) = interp.invoke(&[x])?;
            outs.first().and_then(argmax).ok_or(EvalError::NoOutput)
        })
        .collect()
}

/// Accuracy of `g` on labeled images.
pub fn score(g: &ModelGraph, eval_set: &[(Tensor, usize)], class_names: &[&str]) -> Result<ConfusionMatrix, EvalError> {
    let images: Vec<Tensor> = eval_set.iter().map(|(t, _)| t.clone()).collect();
    let truth: Vec<usize> = eval_set.iter().map(|(_, l)| *l).collect();
    let pred = predict_all(g, &images)?;
    confusion(&truth, &pred, class_names)
}

/// Times `reps` sequential runs on one fixed input after the warm-up runs
/// and returns every sample in milliseconds. The input is the first eval
/// image, or zeros when there is none.
pub fn time_inference(g: &ModelGraph, input: Option<&Tensor>, reps: usize) -> Result<Vec<f64>, EvalError> {
    let interp = Interpreter::new(g);
    let x = match input {
        Some(img) => prepare_input(g, img)?,
        None => {
            let id = *g.inputs.first().ok_or(EvalError::NoOutput)?;
            let shape = g.tensor(id).shape.clone();
            prepare_input(g, &Tensor::zeros_f32(shape))?
        }
    };
    let inputs = [x];
    for _ in 0..WARMUP_RUNS {
        interp.invoke(&inputs)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        interp.invoke(&inputs)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(samples)
}

/// Static metrics plus median latency and, when `eval_set` is non-empty,
/// accuracy.
pub fn benchmark(
    model_name: &str,
    g: &ModelGraph,
    eval_set: &[(Tensor, usize)],
    class_names: &[&str],
    reps: usize,
) -> Result<BenchReport, EvalError> {
    if reps < 3 {
        return Err(EvalError::TooFewReps(reps));
    }
    let samples = time_inference(g, eval_set.first().map(|(t, _)| t), reps)?;
    let accuracy = if eval_set.is_empty() {
        None
    } else {
        Some(score(g, eval_set, class_names)?.accuracy()?)
    };
    Ok(BenchReport {
        model_name: model_name.to_string(),
        inference_ms: median(&samples).expect("reps >= 3"),
        peak_ram_bytes: plan_arena(g).peak_bytes,
        rom_bytes: rom_size(g),
        accuracy,
    })
}

/// Row label used for a graph in reports.
pub fn default_model_name(g: &ModelGraph) -> &'static str {
    match g.input_dtype() {
        Some(DType::I8) => "Quantized (int8)",
        _ => "Float 32 unoptimized",
    }
}

pub const REPORT_HEADERS: [&str; 5] = [
    "On-device Performance",
    "Inference Time (ms)",
    "Peak RAM (K)",
    "ROM Usage (M)",
    "Accuracy",
];

const FOOTER: &str = "K = 1024 bytes, M = 1024 x 1024 bytes; ROM counts serialized model bytes only.";

/// `bytes / 1024`, one decimal.
pub fn format_kib(bytes: usize) -> String {
    format!("{:.1}", bytes as f64 / 1024.0)
}

/// `bytes / 1024²`, one decimal.
pub fn format_mib(bytes: usize) -> String {
    format!("{:.1}", bytes as f64 / (1024.0 * 1024.0))
}

fn cells(r: &BenchReport) -> [String; 5] {
    [
        r.model_name.clone(),
        format!("{:.3}", r.inference_ms),
        format_kib(r.peak_ram_bytes),
        format_mib(r.rom_bytes),
        r.accuracy.map_or("-".to_string(), |a| format!("{:.1}%", a * 100.0)),
    ]
}

/// Aligned text table, rows in input order, with a units footer.
pub fn report_table(reports: &[BenchReport]) -> String {
    let rows: Vec<[String; 5]> = reports.iter().map(cells).collect();
    let mut widths = REPORT_HEADERS.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: [&str; 5]| {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, " | {c:>w$}");
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(REPORT_HEADERS);
    let rule: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.each_ref().map(String::as_str)));
    }
    out.push_str(FOOTER);
    out.push('\n');
    out
}

/// Tab-separated twin of [`report_table`] with raw byte counts.
pub fn report_tsv(reports: &[BenchReport]) -> String {
    let mut s = String::from("model\tinference_ms\tpeak_ram_bytes\trom_bytes\taccuracy\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{}\t{}\t{}",
            r.model_name,
            r.inference_ms,
            r.peak_ram_bytes,
            r.rom_bytes,
            r.accuracy.map_or("-".to_string(), |a| format!("{a:.6}"))
        );
    }
    s
}
