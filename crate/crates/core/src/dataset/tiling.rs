use std::str::FromStr;

use crate::tensor::Tensor;

use super::{DatasetError, Raster};

/// What to do with windows that run past the right or bottom edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TilePolicy {
    /// Keep them, zero-filling the part outside the image.
    #[default]
    PadEdge,
    /// Emit only windows fully inside the image.
    DropPartial,
}

impl TilePolicy {
    pub fn name(self) -> &'static str {
        match self {
            TilePolicy::PadEdge => "pad_edge",
            TilePolicy::DropPartial => "drop_partial",
        }
    }
}

impl FromStr for TilePolicy {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pad_edge" => Ok(TilePolicy::PadEdge),
            "drop_partial" => Ok(TilePolicy::DropPartial),
            _ => Err(DatasetError::InvalidArgument(format!("unknown tiling policy {s:?}"))),
        }
    }
}

/// Tile origins for one raster, in row-major order. Positions are computed
/// on demand, so even very large rasters cost nothing to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile: usize,
    pub stride: usize,
    pub policy: TilePolicy,
}

pub fn tile_grid(
    width: usize,
    height: usize,
    tile: usize,
    stride: usize,
    policy: TilePolicy,
) -> Result<TileGrid, DatasetError> {
    if tile == 0 || stride == 0 {
        return Err(DatasetError::InvalidArgument(
            "tile and stride must be at least 1".into(),
        ));
    }
    Ok(TileGrid {
        width,
        height,
        tile,
        stride,
        policy,
    })
}

impl TileGrid {
    fn axis_count(&self, extent: usize) -> usize {
        match self.policy {
            TilePolicy::PadEdge => extent.div_ceil(self.stride),
            TilePolicy::DropPartial if extent < self.tile => 0,
            TilePolicy::DropPartial => (extent - self.tile) / self.stride + 1,
        }
    }

    pub fn columns(&self) -> usize {
        self.axis_count(self.width)
    }

    pub fn rows(&self) -> usize {
        self.axis_count(self.height)
    }

    pub fn len(&self) -> usize {
        self.columns() * self.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(x, y)` origin of the `i`-th tile.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let cols = self.columns();
        ((i % cols) * self.stride, (i / cols) * self.stride)
    }

    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|i| self.origin(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub source_id: String,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    /// `[height, width, channels]`.
    pub pixels: Tensor,
}

/// Cuts an `[H, W, C]` image into square tiles.
pub fn tile_image(
    img: &Tensor,
    source_id: &str,
    tile: usize,
    stride: usize,
    policy: TilePolicy,
) -> Result<Vec<Tile>, DatasetError> {
    let &[h, w, c] = img.shape() else {
        return Err(DatasetError::InvalidArgument(format!(
            "expected an [H, W, C] image, got shape {:?}",
            img.shape()
        )));
    };
    let data = img
        .as_f32()
        .ok_or_else(|| DatasetError::InvalidArgument("image must be float32".into()))?;
    let grid = tile_grid(w, h, tile, stride, policy)?;
    grid.origins()
        .map(|(x, y)| {
            let pixels = Tensor::from_f32(vec![tile, tile, c], crop(data, w, h, c, x, y, tile))
                .map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
            Ok(Tile {
                source_id: source_id.to_string(),
                x,
                y,
                width: tile,
                height: tile,
                pixels,
            })
        })
        .collect()
}

/// Copies a `tile`×`tile` window at `(x, y)`, zero outside the source.
pub(crate) fn crop<T: Copy + Default>(
    data: &[T],
    w: usize,
    h: usize,
    c: usize,
    x: usize,
    y: usize,
    tile: usize,
) -> Vec<T> {
    let mut out = vec![T::default(); tile * tile * c];
    let copy_w = w.saturating_sub(x).min(tile);
    for row in 0..tile.min(h.saturating_sub(y)) {
        let src = ((y + row) * w + x) * c;
        let dst = row * tile * c;
        out[dst..dst + copy_w * c].copy_from_slice(&data[src..src + copy_w * c]);
    }
    out
}

impl Raster {
    /// 8-bit window with the same placement rules as [`tile_image`].
    pub fn crop(&self, x: usize, y: usize, tile: usize) -> Raster {
        Raster {
            width: tile,
            height: tile,
            data: crop(&self.data, self.width, self.height, 3, x, y, tile),
        }
    }
}

/// Pastes tiles back at their origins into an `[H, W, C]` canvas, dropping
/// anything that falls outside it.
pub fn reassemble(tiles: &[Tile], height: usize, width: usize, channels: usize) -> Tensor {
    let mut out = vec![0.0f32; height * width * channels];
    for t in tiles {
        let px = t.pixels.to_f32_vec();
        for row in 0..t.height {
            let y = t.y + row;
            if y >= height {
                break;
            }
            let n = t.width.min(width.saturating_sub(t.x)) * channels;
            let dst = (y * width + t.x) * channels;
            let src = row * t.width * channels;
            out[dst..dst + n].copy_from_slice(&px[src..src + n]);
        }
    }
    Tensor::from_f32(vec![height, width, channels], out).expect("shape matches buffer")
}
