//! Detector post-processing: head decoding, IoU, NMS, counting and overlays.

mod decode;
mod font;
mod nms;
mod overlay;

pub use decode::{decode, decode_head, sigmoid, AnchorSet, DecodeConfig, HeadAnchors};
pub use nms::{iou, nms, nms_order};
pub use overlay::{draw_boxes, emit_overlay, record_line, Overlay, OverlayOptions};

use std::collections::BTreeMap;

pub const DEFAULT_CONF_THRESH: f64 = 0.25;
pub const DEFAULT_IOU_THRESH: f64 = 0.45;
pub const DEFAULT_CLASS_NAMES: [&str; 1] = ["rock"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DetectError {
    #[error("{channels} channels is not a multiple of {per_anchor} (5 + classes)")]
    Channels { channels: usize, per_anchor: usize },
    #[error("head has {found} anchors but {expected} were configured")]
    AnchorCount { expected: usize, found: usize },
    #[error("head output shape {shape:?} does not match a {grid_h}x{grid_w} grid")]
    Shape {
        shape: Vec<usize>,
        grid_h: usize,
        grid_w: usize,
    },
    #[error("{heads} head outputs for {anchors} anchor sets")]
    HeadCount { heads: usize, anchors: usize },
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: usize,
    pub confidence: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: usize, confidence: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id,
            confidence,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && (0.0..=1.0).contains(&self.confidence)
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
            ..*self
        }
    }
}

/// Per-frame rock counts and their spread.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSummary {
    pub per_frame: Vec<usize>,
    /// count → number of frames with that count.
    pub histogram: BTreeMap<usize, usize>,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

/// Counts boxes of `rock_class` in each frame (NMS already applied). With
/// no frames, min/max/mean are all zero.
pub fn count_rocks(frames: &[Vec<BBox>], rock_class: usize) -> CountSummary {
    let per_frame: Vec<usize> = frames
        .iter()
        .map(|f| f.iter().filter(|b| b.class_id == rock_class).count())
        .collect();
    let mut histogram = BTreeMap::new();
    for &c in &per_frame {
        *histogram.entry(c).or_insert(0) += 1;
    }
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<usize>() as f64 / per_frame.len() as f64
    };
    CountSummary {
        min: per_frame.iter().copied().min().unwrap_or(0),
        max: per_frame.iter().copied().max().unwrap_or(0),
        mean,
        histogram,
        per_frame,
    }
}
