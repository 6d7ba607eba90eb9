//! Panorama ingestion: tiling, labels, PNG I/O, splits and manifests.

mod image;
mod labels;
mod manifest;
mod split;
mod tiling;

use std::path::PathBuf;

pub use image::{decode_image, decode_raster, encode_png, read_png, read_raster, ImageError, Raster};
pub use labels::{
    load_classification_dir, load_detection_dir, load_labels, parse_labels, AnnotationBox, DetectionCorpus,
    LabeledImage, CLASS_NAMES,
};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use split::{shuffle, split_counts, split_dataset, split_stratified, Split, SplitAssignment, DEFAULT_RATIOS};
pub use tiling::{reassemble, tile_grid, tile_image, Tile, TileGrid, TilePolicy};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty id list")]
    EmptyIds,
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("{}:{line}: {reason}", path.display())]
    Label { path: PathBuf, line: usize, reason: String },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: ImageError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let path = path.into();
    move |source| DatasetError::Io { path, source }
}
