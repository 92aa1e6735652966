//! N-way K-shot experiments: sample support sets, fit every classifier,
//! score the full query split and aggregate.

mod ablation;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{Classifier, ClassifierConfig, ClassifierError, ClassifierKind, SupportCache, SupportSet};
use crate::dataset::{sample_support, DatasetError, DatasetManifest, Episode, DEFAULT_SEEDS};
use crate::embedding::{EmbeddingError, EmbeddingStore, LoadOptions, SyntheticEmbeddingConfig};
use crate::geometry::{AugmentConfig, GeometryError};
use crate::numerics::Tensor2;

pub use ablation::{
    ablation_suite, augmentation_ablation, region_context_ablation, training_ablation, AblationReport, TrainingSetting,
};
pub use report::{emit_report, AverageCell, CellMean, ReportFormat, ResultRow, ResultTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("CoverageError: {missing} instances have no embedding (first: {first})")]
    Coverage { missing: usize, first: String },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("EmptyTable: nothing to report")]
    EmptyTable,
    #[error("Format: {0}")]
    Format(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::Coverage { .. } => "CoverageError",
            EvalError::InvalidConfig(_) => "InvalidConfig",
            EvalError::EmptyTable => "EmptyTable",
            EvalError::Format(_) => "Format",
            EvalError::Dataset(e) => e.kind(),
            EvalError::Embedding(e) => e.kind(),
            EvalError::Classifier(e) => e.kind(),
            EvalError::Geometry(e) => e.kind(),
            EvalError::Io { .. } => "IoError",
        }
    }
}

/// Input locations; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub views: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PathsConfig {
    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.manifest, &mut self.views, &mut self.embeddings, &mut self.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Experiment file schema (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub classifiers: Vec<ClassifierKind>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Restrict to these categories; empty means all.
    pub categories: Vec<String>,
    pub classifier: ClassifierConfig,
    pub augment: AugmentConfig,
    pub load: LoadOptions,
    pub synthetic: SyntheticEmbeddingConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classifiers: ClassifierKind::ALL.to_vec(),
            shots: vec![1, 3, 5],
            seeds: DEFAULT_SEEDS.to_vec(),
            categories: Vec::new(),
            classifier: ClassifierConfig::default(),
            augment: AugmentConfig::default(),
            load: LoadOptions::default(),
            synthetic: SyntheticEmbeddingConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.classifiers.is_empty() {
            return Err(EvalError::InvalidConfig("classifier list is empty".into()));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(EvalError::InvalidConfig("shots must be a non-empty list of positive K".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::InvalidConfig("seed list is empty".into()));
        }
        self.classifier.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, EvalError> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }
}

/// One embedding source and classifier setup evaluated under a row label.
#[derive(Debug, Clone)]
pub struct Variant<'a> {
    pub name: String,
    pub store: &'a EmbeddingStore,
    pub config: ClassifierConfig,
    pub classifiers: Vec<ClassifierKind>,
}

/// A query feature and its class index.
pub type LabelledFeature = (Vec<f64>, usize);

/// Support set and query features of `episode` from `store`.
pub fn episode_inputs(
    manifest: &DatasetManifest,
    episode: &Episode,
    store: &EmbeddingStore,
) -> Result<(SupportSet, Vec<LabelledFeature>), EvalError> {
    let get = |id: &str| {
        store.get(id).ok_or_else(|| EvalError::Coverage {
            missing: 1,
            first: id.to_string(),
        })
    };
    let mut rows = Vec::with_capacity(episode.support.len());
    let mut views = Vec::with_capacity(episode.support.len());
    let mut labels = Vec::with_capacity(episode.support.len());
    for item in &episode.support {
        let e = get(&item.instance_id)?;
        rows.push(e.feature.clone());
        views.push(e.views.clone());
        labels.push(item.class);
    }
    let features = Tensor2::from_rows(&rows).map_err(ClassifierError::from)?;
    let cache = SupportCache::new(features, labels, manifest.classes.clone())?;
    let support = SupportSet::new(cache, views)?;
    let queries = episode
        .query
        .iter()
        .map(|q| Ok((get(&q.instance_id)?.feature.clone(), q.class)))
        .collect::<Result<_, EvalError>>()?;
    Ok((support, queries))
}

fn check_coverage(manifest: &DatasetManifest, store: &EmbeddingStore) -> Result<(), EvalError> {
    let missing = store.missing(manifest.instances.iter().map(|i| i.instance_id.as_str()));
    match missing.first() {
        None => Ok(()),
        Some(first) => Err(EvalError::Coverage {
            missing: missing.len(),
            first: first.clone(),
        }),
    }
}

fn selected_categories(manifest: &DatasetManifest, filter: &[String]) -> Result<Vec<String>, EvalError> {
    let all = manifest.categories();
    if filter.is_empty() {
        return Ok(all);
    }
    for c in filter {
        if !all.contains(c) {
            return Err(DatasetError::UnknownClass(format!("category {c}")).into());
        }
    }
    Ok(all.into_iter().filter(|c| filter.contains(c)).collect())
}

/// Every (variant, category, K, seed, classifier) cell. Each category is its
/// own N-way task over its classes. Cells run in parallel; the table order is
/// canonical.
pub fn run_variants(
    manifest: &DatasetManifest,
    variants: &[Variant<'_>],
    shots: &[usize],
    seeds: &[u64],
    categories: &[String],
) -> Result<ResultTable, EvalError> {
    if variants.iter().any(|v| v.classifiers.is_empty()) || variants.is_empty() {
        return Err(EvalError::InvalidConfig("classifier list is empty".into()));
    }
    for v in variants {
        v.config.validate()?;
        check_coverage(manifest, v.store)?;
    }
    let cats = selected_categories(manifest, categories)?;
    let subs: Vec<DatasetManifest> = cats
        .iter()
        .map(|c| manifest.for_category(c))
        .collect::<Result<_, _>>()?;

    // Episodes are sampled up front so shot shortfalls surface before any training.
    let mut episodes = Vec::new();
    for (ci, sub) in subs.iter().enumerate() {
        for &k in shots {
            for &seed in seeds {
                episodes.push((ci, sample_support(sub, k, seed)?));
            }
        }
    }
    let jobs: Vec<(usize, usize, ClassifierKind)> = variants
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| {
            (0..episodes.len()).flat_map(move |ei| v.classifiers.iter().map(move |&k| (vi, ei, k)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(vi, ei, kind)| {
            let v = &variants[vi];
            let (ci, episode) = &episodes[ei];
            let (support, queries) = episode_inputs(&subs[*ci], episode, v.store)?;
            let clf = Classifier::fit(kind, &support, &v.config)?;
            let feats: Vec<&[f64]> = queries.iter().map(|(f, _)| f.as_slice()).collect();
            let preds = clf.predict_all(&feats)?;
            let correct = preds.iter().zip(&queries).filter(|(p, (_, y))| *p == y).count();
            let total = queries.len();
            if total == 0 {
                return Err(EvalError::InvalidConfig(format!("category {} has no query instances", cats[*ci])));
            }
            Ok(ResultRow {
                variant: v.name.clone(),
                category: cats[*ci].clone(),
                classifier: kind,
                k: episode.k,
                seed: episode.seed,
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    ResultTable::new(variants.iter().map(|v| v.name.clone()).collect(), rows)
}

/// The main results table under variant name `"main"`.
pub fn run_experiment(
    manifest: &DatasetManifest,
    store: &EmbeddingStore,
    config: &ExperimentConfig,
) -> Result<ResultTable, EvalError> {
    config.validate()?;
    run_variants(
        manifest,
        &[Variant {
            name: "main".into(),
            store,
            config: config.classifier.clone(),
            classifiers: config.classifiers.clone(),
        }],
        &config.shots,
        &config.seeds,
        &config.categories,
    )
}
