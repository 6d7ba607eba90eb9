use crate::dataset::{encode_png, ImageError, Raster};

use super::font::{glyph, GLYPH_H, GLYPH_W};
use super::BBox;

const PALETTE: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 128, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
];

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayOptions {
    pub class_names: Vec<String>,
    /// Draw "name 0.87" above each box.
    pub draw_labels: bool,
}

impl Default for OverlayOptions {
    fn default() -> Self {
        OverlayOptions {
            class_names: super::DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            draw_labels: false,
        }
    }
}

impl OverlayOptions {
    fn class_name(&self, id: usize) -> String {
        self.class_names
            .get(id)
            .cloned()
            .unwrap_or_else(|| format!("class{id}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub png: Vec<u8>,
    pub records: Vec<String>,
}

fn corners(b: &BBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let c = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi.saturating_sub(1));
    (c(b.x_min, w), c(b.y_min, h), c(b.x_max, w), c(b.y_max, h))
}

/// `tile_id  class  confidence  x0  y0  x1  y1`, tab-separated, with the
/// same rounded corners that are drawn.
pub fn record_line(tile_id: &str, b: &BBox, opts: &OverlayOptions, w: usize, h: usize) -> String {
    let (x0, y0, x1, y1) = corners(b, w, h);
    format!(
        "{tile_id}\t{}\t{:.3}\t{x0}\t{y0}\t{x1}\t{y1}",
        opts.class_name(b.class_id),
        b.confidence
    )
}

fn draw_text(img: &mut Raster, text: &str, x: usize, y: usize, color: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - dx) & 1 == 1 {
                    let (px, py) = (x + i * (GLYPH_W + 1) + dx, y + dy);
                    if px < img.width && py < img.height {
                        img.set_pixel(px, py, color);
                    }
                }
            }
        }
    }
}

/// Draws a 1-pixel rectangle border per box at its rounded corners (clamped
/// to the image), in the class color.
pub fn draw_boxes(tile: &Raster, boxes: &[BBox], opts: &OverlayOptions) -> Raster {
    let mut img = tile.clone();
    if img.width == 0 || img.height == 0 {
        return img;
    }
    for b in boxes {
        let color = PALETTE[b.class_id % PALETTE.len()];
        let (x0, y0, x1, y1) = corners(b, img.width, img.height);
        for x in x0..=x1 {
            img.set_pixel(x, y0, color);
            img.set_pixel(x, y1, color);
        }
        for y in y0..=y1 {
            img.set_pixel(x0, y, color);
            img.set_pixel(x1, y, color);
        }
        if opts.draw_labels {
            let text = format!("{} {:.2}", opts.class_name(b.class_id), b.confidence);
            let ty = if y0 > GLYPH_H { y0 - GLYPH_H - 1 } else { y0 + 2 };
            draw_text(&mut img, &text, x0 + 1, ty, color);
        }
    }
    img
}

pub fn emit_overlay(
    tile: &Raster,
    tile_id: &str,
    boxes: &[BBox],
    opts: &OverlayOptions,
) -> Result<Overlay, ImageError> {
    let img = draw_boxes(tile, boxes, opts);
    Ok(Overlay {
        png: encode_png(&img)?,
        records: boxes
            .iter()
            .map(|b| record_line(tile_id, b, opts, tile.width, tile.height))
            .collect(),
    })
}
