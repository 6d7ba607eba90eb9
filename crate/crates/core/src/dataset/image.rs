use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::tensor::Tensor;

use super::{io_err, DatasetError};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("corrupt PNG stream: {0}")]
    Corrupt(String),
    #[error("unsupported bit depth {0}")]
    UnsupportedBitDepth(u8),
    #[error("image must be [H, W, 3] float32, got {0:?}")]
    Shape(Vec<usize>),
    #[error("PNG encoding failed: {0}")]
    Encode(String),
}

/// 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    /// `[H, W, 3]` float32 scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let v = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::from_f32(vec![self.height, self.width, 3], v).expect("buffer matches shape")
    }

    /// Inverse of [`Raster::to_tensor`]; values are clamped to [0, 1] and
    /// rounded to the nearest level.
    pub fn from_tensor(t: &Tensor) -> Result<Self, ImageError> {
        let (&[h, w, 3], Some(v)) = (t.shape(), t.as_f32()) else {
            return Err(ImageError::Shape(t.shape().to_vec()));
        };
        let data = v.iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Ok(Raster {
            width: w,
            height: h,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

fn corrupt(e: impl std::fmt::Display) -> ImageError {
    ImageError::Corrupt(e.to_string())
}

/// Decodes any 8-bit (or lower) PNG into RGB. Palettes and low bit depths
/// are expanded, gray is replicated, alpha is dropped.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster, ImageError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(corrupt)?;
    let (color, depth) = reader.output_color_type();
    if depth == BitDepth::Sixteen {
        return Err(ImageError::UnsupportedBitDepth(16));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Corrupt("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(ImageError::Corrupt("palette was not expanded".into())),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0]; 3]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        data,
    })
}

/// `[H, W, 3]` float32 with values `level / 255`.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor, ImageError> {
    Ok(decode_raster(bytes)?.to_tensor())
}

pub fn encode_png(r: &Raster) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
        w.write_image_data(&r.data)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        w.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster, DatasetError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_raster(&bytes).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor, DatasetError> {
    Ok(read_raster(path)?.to_tensor())
}
