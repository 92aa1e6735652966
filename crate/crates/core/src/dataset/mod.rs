//! Instance-level dataset construction: connected components over
//! image-level masks, per-type 50/50 splits and support sampling.

mod components;
mod episode;
mod manifest;
mod mask;
mod synthetic;

use std::path::Path;

pub use components::{connected_components, Component, Connectivity, Labeling};
pub use episode::{sample_support, Episode, EpisodeItem, DEFAULT_SEEDS};
pub use manifest::{
    assign_splits, build_manifest, train_count, BuildOptions, ClassCounts, DatasetLayout,
    DatasetManifest, DefectInstance, Split, MANIFEST_SCHEMA_VERSION,
};
pub use mask::{Mask, Rect, RleMask};
pub use synthetic::{synthetic_manifest, SyntheticManifestSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("MissingMask: no mask for image {0}")]
    MissingMask(String),
    #[error("UnknownClass: {0}")]
    UnknownClass(String),
    #[error("InsufficientShots: class {class} has {available} train instances, {requested} requested")]
    InsufficientShots {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("InvalidManifest: {0}")]
    InvalidManifest(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("Format: {0}")]
    Format(String),
    #[error("Image: {path}: {message}")]
    Image { path: String, message: String },
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::MissingMask(_) => "MissingMask",
            DatasetError::UnknownClass(_) => "UnknownClass",
            DatasetError::InsufficientShots { .. } => "InsufficientShots",
            DatasetError::InvalidManifest(_) => "InvalidManifest",
            DatasetError::InvalidArgument(_) => "InvalidArgument",
            DatasetError::Format(_) => "Format",
            DatasetError::Image { .. } => "Image",
            DatasetError::Io { .. } => "IoError",
        }
    }
}
