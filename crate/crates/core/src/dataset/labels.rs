use std::fs;
use std::path::{Path, PathBuf};

use crate::detect::BBox;

use super::{io_err, DatasetError};

/// Classification classes, in label-index order. Tiles are sorted into
/// folders with these names.
pub const CLASS_NAMES: [&str; 3] = ["other", "rock", "rover"];

/// One box in normalized center form: every coordinate is a fraction of the
/// tile extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl AnnotationBox {
    /// Pixel corners on a `tile_w`×`tile_h` tile, confidence 1.
    pub fn to_bbox(&self, tile_w: f64, tile_h: f64) -> BBox {
        BBox {
            x_min: (self.cx - self.w / 2.0) * tile_w,
            y_min: (self.cy - self.h / 2.0) * tile_h,
            x_max: (self.cx + self.w / 2.0) * tile_w,
            y_max: (self.cy + self.h / 2.0) * tile_h,
            class_id: self.class_id,
            confidence: 1.0,
        }
    }

    pub fn from_bbox(b: &BBox, tile_w: f64, tile_h: f64) -> Self {
        AnnotationBox {
            class_id: b.class_id,
            cx: (b.x_min + b.x_max) / 2.0 / tile_w,
            cy: (b.y_min + b.y_max) / 2.0 / tile_h,
            w: (b.x_max - b.x_min) / tile_w,
            h: (b.y_max - b.y_min) / tile_h,
        }
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {} {} {}", self.class_id, self.cx, self.cy, self.w, self.h)
    }
}

fn parse_line(line: &str) -> Result<AnnotationBox, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let class_id = fields[0]
        .parse::<usize>()
        .map_err(|_| format!("bad class id {:?}", fields[0]))?;
    let mut v = [0.0f64; 4];
    for (slot, (name, s)) in v.iter_mut().zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..])) {
        let x: f64 = s.parse().map_err(|_| format!("bad {name} {s:?}"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(format!("{name} {x} outside [0, 1]"));
        }
        *slot = x;
    }
    let [cx, cy, w, h] = v;
    if w <= 0.0 || h <= 0.0 {
        return Err("box extent must be positive".into());
    }
    Ok(AnnotationBox { class_id, cx, cy, w, h })
}

/// Parses "class cx cy w h" records, one per line. Blank lines are skipped;
/// `path` is only used in error messages.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<AnnotationBox>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_line(l).map_err(|reason| DatasetError::Label {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            })
        })
        .collect()
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<AnnotationBox>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_labels(&text, path)
}

/// Label files of a detection corpus, keyed by file stem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionCorpus {
    pub files: Vec<(String, Vec<AnnotationBox>)>,
}

impl DetectionCorpus {
    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn box_count(&self) -> usize {
        self.files.iter().map(|(_, b)| b.len()).sum()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    paths.sort();
    Ok(paths)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Reads every `*.txt` label file in `dir`.
pub fn load_detection_dir(dir: impl AsRef<Path>) -> Result<DetectionCorpus, DatasetError> {
    let mut corpus = DetectionCorpus::default();
    for p in sorted_entries(dir.as_ref())? {
        if p.is_file() && has_ext(&p, "txt") {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            corpus.files.push((stem, load_labels(&p)?));
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub path: PathBuf,
    pub label: usize,
}

/// Collects PNGs from `root/<class>/` for each name in `classes`; missing
/// class folders are treated as empty. Order is class, then file name.
pub fn load_classification_dir(root: impl AsRef<Path>, classes: &[&str]) -> Result<Vec<LabeledImage>, DatasetError> {
    let mut out = Vec::new();
    for (label, name) in classes.iter().enumerate() {
        let dir = root.as_ref().join(name);
        if !dir.is_dir() {
            continue;
        }
        for p in sorted_entries(&dir)? {
            if p.is_file() && has_ext(&p, "png") {
                out.push(LabeledImage { path: p, label });
            }
        }
    }
    Ok(out)
}
