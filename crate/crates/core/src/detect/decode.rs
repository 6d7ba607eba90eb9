use crate::tensor::Tensor;

use super::{BBox, DetectError, DEFAULT_CONF_THRESH};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Anchor priors (pixels) and grid extent for one output head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAnchors {
    pub grid_w: usize,
    pub grid_h: usize,
    pub anchors: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub heads: Vec<HeadAnchors>,
}

impl AnchorSet {
    /// One head with a single anchor the size of a grid cell.
    pub fn cell_sized(grid_w: usize, grid_h: usize, frame_w: f64, frame_h: f64) -> Self {
        AnchorSet {
            heads: vec![HeadAnchors {
                grid_w,
                grid_h,
                anchors: vec![(frame_w / grid_w as f64, frame_h / grid_h as f64)],
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub frame_w: f64,
    pub frame_h: f64,
    pub num_classes: usize,
    pub conf_thresh: f64,
}

impl DecodeConfig {
    pub fn new(frame_w: f64, frame_h: f64) -> Self {
        DecodeConfig {
            frame_w,
            frame_h,
            num_classes: 1,
            conf_thresh: DEFAULT_CONF_THRESH,
        }
    }
}

/// Decodes one `(grid_h, grid_w, anchors·(5 + classes))` head (a leading
/// batch of 1 is allowed). Per cell and anchor the channels are
/// `tx, ty, tw, th, objectness, class scores…`:
///
/// - center = (cell + σ(tx, ty)) · cell size
/// - extent = anchor · exp(tw, th)
/// - confidence = σ(objectness) · σ(best class score)
///
/// Boxes are clipped to the frame; those below `conf_thresh`, degenerate
/// after clipping, or with non-finite values are dropped. Emission order is
/// row, column, anchor.
pub fn decode_head(raw: &Tensor, head: &HeadAnchors, cfg: &DecodeConfig) -> Result<Vec<BBox>, DetectError> {
    let shape = raw.shape();
    let dims = match shape {
        [h, w, c] | [1, h, w, c] => (*h, *w, *c),
        _ => {
            return Err(DetectError::Shape {
                shape: shape.to_vec(),
                grid_h: head.grid_h,
                grid_w: head.grid_w,
            })
        }
    };
    let (gh, gw, ch) = dims;
    if (gh, gw) != (head.grid_h, head.grid_w) {
        return Err(DetectError::Shape {
            shape: shape.to_vec(),
            grid_h: head.grid_h,
            grid_w: head.grid_w,
        });
    }
    let per_anchor = 5 + cfg.num_classes;
    if ch % per_anchor != 0 {
        return Err(DetectError::Channels {
            channels: ch,
            per_anchor,
        });
    }
    let na = ch / per_anchor;
    if na != head.anchors.len() {
        return Err(DetectError::AnchorCount {
            expected: head.anchors.len(),
            found: na,
        });
    }
    let v = raw.to_f32_vec();
    let cell_w = cfg.frame_w / gw as f64;
    let cell_h = cfg.frame_h / gh as f64;
    let mut out = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            for (a, &(aw, ah)) in head.anchors.iter().enumerate() {
                let base = (row * gw + col) * ch + a * per_anchor;
                let p = |k: usize| v[base + k] as f64;
                let mut best = (0, f64::NEG_INFINITY);
                for c in 0..cfg.num_classes {
                    let s = p(5 + c);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                let conf = sigmoid(p(4)) * if cfg.num_classes == 0 { 1.0 } else { sigmoid(best.1) };
                // written this way so a NaN confidence is dropped
                if conf.is_nan() || conf < cfg.conf_thresh {
                    continue;
                }
                let cx = (col as f64 + sigmoid(p(0))) * cell_w;
                let cy = (row as f64 + sigmoid(p(1))) * cell_h;
                let bw = aw * p(2).exp();
                let bh = ah * p(3).exp();
                let b = BBox {
                    x_min: (cx - bw / 2.0).clamp(0.0, cfg.frame_w),
                    y_min: (cy - bh / 2.0).clamp(0.0, cfg.frame_h),
                    x_max: (cx + bw / 2.0).clamp(0.0, cfg.frame_w),
                    y_max: (cy + bh / 2.0).clamp(0.0, cfg.frame_h),
                    class_id: best.0,
                    confidence: conf,
                };
                if b.is_valid() {
                    out.push(b);
                }
            }
        }
    }
    Ok(out)
}

/// Decodes every head and concatenates the boxes in head order.
pub fn decode(outputs: &[Tensor], anchors: &AnchorSet, cfg: &DecodeConfig) -> Result<Vec<BBox>, DetectError> {
    if outputs.len() != anchors.heads.len() {
        return Err(DetectError::HeadCount {
            heads: outputs.len(),
            anchors: anchors.heads.len(),
        });
    }
    let mut all = Vec::new();
    for (t, h) in outputs.iter().zip(&anchors.heads) {
        all.extend(decode_head(t, h, cfg)?);
    }
    Ok(all)
}
