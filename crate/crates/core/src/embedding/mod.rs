//! Per-view embeddings, their averaged MVREC features and the interchange
//! file written by the external encoder.

mod export;
mod mve1;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{group_views, ViewSpec};
use crate::numerics::{l2_norm, Tensor2, ZERO_NORM_EPS};

pub use export::{export_features_csv, read_features_csv, FeatureRow};
pub use mve1::{split_key, EmbeddingFile, EmbeddingRecord, MVE1_MAGIC, MVE1_VERSION, MVE1_VERSION_TAGGED};
pub use synthetic::{synthetic_embeddings, synthetic_store, CenterKind, SyntheticEmbeddingConfig};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("CorruptFile: at byte {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },
    #[error("MissingViews: instance {instance} has {found} of {expected} views")]
    MissingViews {
        instance: String,
        expected: usize,
        found: usize,
    },
    #[error("ChannelMismatch: expected {expected} channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("DuplicateKey: {0}")]
    DuplicateKey(String),
    #[error("UnexpectedKey: {0} is not in the views file")]
    UnexpectedKey(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("Format: {0}")]
    Format(String),
}

impl EmbeddingError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EmbeddingError::CorruptFile { .. } => "CorruptFile",
            EmbeddingError::MissingViews { .. } => "MissingViews",
            EmbeddingError::ChannelMismatch { .. } => "ChannelMismatch",
            EmbeddingError::DuplicateKey(_) => "DuplicateKey",
            EmbeddingError::UnexpectedKey(_) => "UnexpectedKey",
            EmbeddingError::InvalidArgument(_) => "InvalidArgument",
            EmbeddingError::Io { .. } => "IoError",
            EmbeddingError::Format(_) => "Format",
        }
    }
}

/// View embeddings of one instance and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MvrecEmbedding {
    pub instance_id: String,
    /// `V × C`, rows in view-id order.
    pub views: Tensor2,
    /// Column mean of `views`.
    pub feature: Vec<f64>,
}

impl MvrecEmbedding {
    /// Averages `views`; with `normalize_first` each row is scaled to unit norm
    /// (zero rows are left as they are) before averaging.
    pub fn from_views(
        instance_id: impl Into<String>,
        mut views: Tensor2,
        normalize_first: bool,
    ) -> Result<Self, EmbeddingError> {
        if views.rows() == 0 {
            return Err(EmbeddingError::InvalidArgument("an instance needs at least one view".into()));
        }
        if normalize_first {
            for r in 0..views.rows() {
                let row = views.row_mut(r);
                let n = l2_norm(row);
                if n >= ZERO_NORM_EPS {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        let feature = views.column_means().expect("at least one row");
        Ok(MvrecEmbedding {
            instance_id: instance_id.into(),
            views,
            feature,
        })
    }

    pub fn num_views(&self) -> usize {
        self.views.rows()
    }

    pub fn channels(&self) -> usize {
        self.views.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    /// L2-normalize every view before averaging.
    pub normalize_before_average: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingEntry {
    pub instance_id: String,
    pub expected: usize,
    pub found: usize,
    pub missing_views: Vec<u32>,
}

/// Views-file instances lacking some or all of their embeddings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub expected_instances: usize,
    pub complete_instances: usize,
    pub missing: Vec<MissingEntry>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// First incomplete instance as an error.
    pub fn require_complete(&self) -> Result<(), EmbeddingError> {
        match self.missing.first() {
            None => Ok(()),
            Some(m) => Err(EmbeddingError::MissingViews {
                instance: m.instance_id.clone(),
                expected: m.expected,
                found: m.found,
            }),
        }
    }
}

/// Immutable map from instance id to its MVREC embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    channels: usize,
    backbone_tag: String,
    entries: BTreeMap<String, MvrecEmbedding>,
}

impl EmbeddingStore {
    pub fn new(channels: usize, backbone_tag: impl Into<String>) -> Self {
        EmbeddingStore {
            channels,
            backbone_tag: backbone_tag.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, e: MvrecEmbedding) -> Result<(), EmbeddingError> {
        if e.channels() != self.channels {
            return Err(EmbeddingError::ChannelMismatch {
                expected: self.channels,
                actual: e.channels(),
            });
        }
        if self.entries.contains_key(&e.instance_id) {
            return Err(EmbeddingError::DuplicateKey(e.instance_id));
        }
        self.entries.insert(e.instance_id.clone(), e);
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn backbone_tag(&self) -> &str {
        &self.backbone_tag
    }

    pub fn get(&self, instance_id: &str) -> Option<&MvrecEmbedding> {
        self.entries.get(instance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted by instance id.
    pub fn iter(&self) -> impl Iterator<Item = &MvrecEmbedding> {
        self.entries.values()
    }

    /// Ids from `wanted` that have no embedding.
    pub fn missing<'a>(&self, wanted: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        wanted
            .into_iter()
            .filter(|id| !self.entries.contains_key(*id))
            .map(str::to_string)
            .collect()
    }

    /// Groups the records of `file` per instance, checks them against the
    /// views file and averages complete instances. Incomplete instances are
    /// left out of the store and listed in the report.
    pub fn from_file(
        file: &EmbeddingFile,
        views: &[ViewSpec],
        opts: LoadOptions,
    ) -> Result<(Self, CoverageReport), EmbeddingError> {
        let expected = group_views(views);
        let c = file.channels as usize;
        let mut got: HashMap<&str, BTreeMap<u32, &[f32]>> = HashMap::new();
        for r in &file.records {
            if r.values.len() != c {
                return Err(EmbeddingError::ChannelMismatch {
                    expected: c,
                    actual: r.values.len(),
                });
            }
            let known = expected
                .get(&r.instance_id)
                .is_some_and(|ids| ids.binary_search(&r.view_id).is_ok());
            if !known {
                return Err(EmbeddingError::UnexpectedKey(r.key()));
            }
            if got
                .entry(r.instance_id.as_str())
                .or_default()
                .insert(r.view_id, &r.values)
                .is_some()
            {
                return Err(EmbeddingError::DuplicateKey(r.key()));
            }
        }
        let mut store = EmbeddingStore::new(c, file.backbone_tag.clone());
        let mut report = CoverageReport {
            expected_instances: expected.len(),
            ..CoverageReport::default()
        };
        for (id, view_ids) in &expected {
            let have = got.remove(id.as_str()).unwrap_or_default();
            if have.len() < view_ids.len() {
                report.missing.push(MissingEntry {
                    instance_id: id.clone(),
                    expected: view_ids.len(),
                    found: have.len(),
                    missing_views: view_ids
                        .iter()
                        .copied()
                        .filter(|v| !have.contains_key(v))
                        .collect(),
                });
                continue;
            }
            let mut data = Vec::with_capacity(have.len() * c);
            for values in have.values() {
                data.extend(values.iter().map(|&v| v as f64));
            }
            let views = Tensor2::from_vec(have.len(), c, data)
                .map_err(|e| EmbeddingError::Format(e.to_string()))?;
            store.insert(MvrecEmbedding::from_views(id.clone(), views, opts.normalize_before_average)?)?;
            report.complete_instances += 1;
        }
        Ok((store, report))
    }
}

/// Reads an MVE1 file and averages it against the views it was generated from.
pub fn load_embeddings(
    path: &Path,
    views: &[ViewSpec],
    opts: LoadOptions,
) -> Result<(EmbeddingStore, CoverageReport), EmbeddingError> {
    let file = EmbeddingFile::read(path)?;
    EmbeddingStore::from_file(&file, views, opts)
}
