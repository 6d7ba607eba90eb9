use std::cmp::Ordering;

use super::BBox;

/// Intersection over union; 0 when the boxes are disjoint or either is
/// empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Priority order: confidence descending, then `x_min`, then `y_min`
/// ascending.
pub fn nms_order(a: &BBox, b: &BBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.x_min.total_cmp(&b.x_min))
        .then(a.y_min.total_cmp(&b.y_min))
}

/// Greedy per-class suppression. A box survives unless a higher-priority
/// survivor of the same class overlaps it with IoU ≥ `iou_thresh`. Output
/// is in priority order.
pub fn nms(boxes: &[BBox], iou_thresh: f64) -> Vec<BBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(nms_order);
    let mut kept: Vec<BBox> = Vec::new();
    for b in sorted {
        if !kept
            .iter()
            .any(|k| k.class_id == b.class_id && iou(k, &b) >= iou_thresh)
        {
            kept.push(b);
        }
    }
    kept
}
