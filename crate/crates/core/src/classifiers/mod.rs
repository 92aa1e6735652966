//! Few-shot classifiers over MVREC features.
//!
//! Every classifier sees the same [`SupportSet`]: one averaged feature and
//! `V` view embeddings per support instance. Training-free kinds are ready
//! as soon as they are built; the rest need [`Classifier::train`].

mod baselines;
mod persist;
mod zip;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tensor2};

pub use baselines::{
    clip_adapter_objective, linear_probe_objective, train_clip_adapter, train_linear_probe,
    ClipAdapterConfig, ClipAdapterModel, LinearProbeModel,
};
pub use persist::{read_zip_model, write_zip_model, MVP1_MAGIC};
pub use zip::{
    sdpa_logits, train_zip_adapter_f, zip_forward, zip_objective, ObjectiveEval, TraceEntry,
    TrainConfig, TrainOutcome, ZipModel, ZipParams,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("NonFiniteLoss: loss became non-finite at iteration {iteration} ({detail})")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("UntrainedState: {0} must be trained before prediction")]
    UntrainedState(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("Format: {0}")]
    Format(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClassifierError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ClassifierError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierError::Numerics(e) => e.kind(),
            ClassifierError::NonFiniteLoss { .. } => "NonFiniteLoss",
            ClassifierError::UntrainedState(_) => "UntrainedState",
            ClassifierError::InvalidConfig(_) => "InvalidConfig",
            ClassifierError::Format(_) => "Format",
            ClassifierError::Io { .. } => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Support features with their class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportCache {
    features: Tensor2,
    labels: Vec<usize>,
    classes: Vec<String>,
}

impl SupportCache {
    /// Every class in `classes` needs at least one row.
    pub fn new(features: Tensor2, labels: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(NumericsError::ShapeMismatch {
                expected: format!("{} labels", features.rows()),
                actual: format!("{} labels", labels.len()),
            }
            .into());
        }
        if classes.len() < 2 {
            return Err(ClassifierError::InvalidConfig("a support set needs at least 2 classes".into()));
        }
        let mut counts = vec![0usize; classes.len()];
        for &l in &labels {
            if l >= classes.len() {
                return Err(NumericsError::IndexOutOfRange {
                    index: l,
                    len: classes.len(),
                }
                .into());
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "class {} has no support rows",
                classes[c]
            )));
        }
        Ok(SupportCache {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Rows per class.
    pub fn shots(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// `NK × N` label matrix.
    pub fn one_hot(&self) -> Tensor2 {
        let mut y = Tensor2::zeros(self.labels.len(), self.classes.len());
        for (i, &l) in self.labels.iter().enumerate() {
            y.set(i, l, 1.0);
        }
        y
    }

    /// Per-class mean feature, `N × C`.
    pub fn class_means(&self) -> Tensor2 {
        let c = self.channels();
        let mut means = Tensor2::zeros(self.num_classes(), c);
        for (row, &l) in self.features.iter_rows().zip(&self.labels) {
            for (m, v) in means.row_mut(l).iter_mut().zip(row) {
                *m += v;
            }
        }
        for (k, n) in self.shots().into_iter().enumerate() {
            means.row_mut(k).iter_mut().for_each(|m| *m /= n as f64);
        }
        means
    }
}

/// A support cache plus the view embeddings behind each cached feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub cache: SupportCache,
    /// One `V × C` tensor per cache row.
    pub views: Vec<Tensor2>,
}

impl SupportSet {
    pub fn new(cache: SupportCache, views: Vec<Tensor2>) -> Result<Self> {
        if views.len() != cache.features.rows() {
            return Err(NumericsError::ShapeMismatch {
                expected: format!("{} view tensors", cache.features.rows()),
                actual: format!("{}", views.len()),
            }
            .into());
        }
        for v in &views {
            if v.rows() == 0 || v.cols() != cache.channels() {
                return Err(NumericsError::ShapeMismatch {
                    expected: format!("V x {} views with V >= 1", cache.channels()),
                    actual: format!("{} x {}", v.rows(), v.cols()),
                }
                .into());
            }
        }
        Ok(SupportSet { cache, views })
    }

    /// All view embeddings stacked, with their labels.
    pub fn view_batch(&self) -> (Tensor2, Vec<usize>) {
        let c = self.cache.channels();
        let total: usize = self.views.iter().map(Tensor2::rows).sum();
        let mut data = Vec::with_capacity(total * c);
        let mut labels = Vec::with_capacity(total);
        for (v, &l) in self.views.iter().zip(&self.cache.labels) {
            data.extend_from_slice(v.data());
            labels.extend(std::iter::repeat_n(l, v.rows()));
        }
        (
            Tensor2::from_vec(total, c, data).expect("views validated"),
            labels,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    Protonet,
    Linearprob,
    ClipAdapter,
    Tip,
    TipF,
    Zip,
    ZipF,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 8] = [
        ClassifierKind::Knn,
        ClassifierKind::Protonet,
        ClassifierKind::Linearprob,
        ClassifierKind::ClipAdapter,
        ClassifierKind::Tip,
        ClassifierKind::TipF,
        ClassifierKind::Zip,
        ClassifierKind::ZipF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::Protonet => "protonet",
            ClassifierKind::Linearprob => "linearprob",
            ClassifierKind::ClipAdapter => "clip_adapter",
            ClassifierKind::Tip => "tip",
            ClassifierKind::TipF => "tip_f",
            ClassifierKind::Zip => "zip",
            ClassifierKind::ZipF => "zip_f",
        }
    }

    /// Row label used in text reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "KNN",
            ClassifierKind::Protonet => "ProtoNet",
            ClassifierKind::Linearprob => "LinearProb",
            ClassifierKind::ClipAdapter => "CLIP-Adapter",
            ClassifierKind::Tip => "Tip-Adapter",
            ClassifierKind::TipF => "Tip-Adapter-F",
            ClassifierKind::Zip => "Zip-Adapter",
            ClassifierKind::ZipF => "Zip-Adapter-F",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn needs_training(self) -> bool {
        matches!(
            self,
            ClassifierKind::Linearprob
                | ClassifierKind::ClipAdapter
                | ClassifierKind::TipF
                | ClassifierKind::ZipF
        )
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Sharpness for the training-free cache models.
    pub zip_beta: f64,
    /// Fine-tuning setup shared by every trained kind.
    pub train: TrainConfig,
    /// Triplet weight for the learnable-cache baseline.
    pub tip_f_lambda: f64,
    pub clip_adapter: ClipAdapterConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            zip_beta: 32.0,
            train: TrainConfig::default(),
            tip_f_lambda: 0.0,
            clip_adapter: ClipAdapterConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zip_beta > 0.0 && self.zip_beta.is_finite()) {
            return Err(ClassifierError::InvalidConfig("zip_beta must be positive".into()));
        }
        if !(self.tip_f_lambda >= 0.0) {
            return Err(ClassifierError::InvalidConfig("tip_f_lambda must be non-negative".into()));
        }
        self.train.validate()?;
        self.clip_adapter.validate()
    }
}

#[derive(Debug, Clone)]
enum Model {
    Knn,
    Protonet(Tensor2),
    Linear(LinearProbeModel),
    ClipAdapter(ClipAdapterModel),
    /// SDPA over an un-adapted cache.
    Tip { beta: f64, cache: Tensor2 },
    Zip(ZipModel),
}

/// A classifier bound to one support set.
#[derive(Debug, Clone)]
pub struct Classifier {
    kind: ClassifierKind,
    config: ClassifierConfig,
    cache: SupportCache,
    model: Option<Model>,
    trace: Vec<TraceEntry>,
}

impl Classifier {
    /// Training-free kinds are usable immediately.
    pub fn new(kind: ClassifierKind, cache: SupportCache, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let model = match kind {
            ClassifierKind::Knn => Some(Model::Knn),
            ClassifierKind::Protonet => Some(Model::Protonet(cache.class_means())),
            ClassifierKind::Tip => Some(Model::Tip {
                beta: config.zip_beta,
                cache: cache.features().clone(),
            }),
            ClassifierKind::Zip => Some(Model::Zip(ZipModel::new(
                ZipParams::fresh(cache.features()),
                config.zip_beta,
                true,
                cache.labels().to_vec(),
                cache.num_classes(),
            )?)),
            _ => None,
        };
        Ok(Classifier {
            kind,
            config,
            cache,
            model,
            trace: Vec::new(),
        })
    }

    /// Fits trained kinds on every view embedding of `support`; a no-op for the others.
    pub fn train(&mut self, support: &SupportSet) -> Result<()> {
        if support.cache != self.cache {
            return Err(ClassifierError::InvalidConfig(
                "training support differs from the classifier's cache".into(),
            ));
        }
        let cfg = &self.config;
        let model = match self.kind {
            ClassifierKind::ZipF => {
                let out = train_zip_adapter_f(&support.cache, &support.views, &cfg.train)?;
                self.trace = out.trace;
                Model::Zip(ZipModel::new(
                    out.params,
                    cfg.train.beta,
                    cfg.train.adapt_cache,
                    self.cache.labels().to_vec(),
                    self.cache.num_classes(),
                )?)
            }
            ClassifierKind::TipF => {
                let tc = TrainConfig {
                    lambda: cfg.tip_f_lambda,
                    train_zip: false,
                    train_cache: true,
                    ..cfg.train.clone()
                };
                let out = train_zip_adapter_f(&support.cache, &support.views, &tc)?;
                self.trace = out.trace;
                Model::Tip {
                    beta: tc.beta,
                    cache: out.params.cache,
                }
            }
            ClassifierKind::Linearprob => {
                let (m, trace) = train_linear_probe(support, &cfg.train)?;
                self.trace = trace;
                Model::Linear(m)
            }
            ClassifierKind::ClipAdapter => {
                let (m, trace) = train_clip_adapter(support, &cfg.clip_adapter, &cfg.train)?;
                self.trace = trace;
                Model::ClipAdapter(m)
            }
            _ => return Ok(()),
        };
        self.model = Some(model);
        Ok(())
    }

    /// [`Classifier::new`] followed by [`Classifier::train`].
    pub fn fit(kind: ClassifierKind, support: &SupportSet, config: &ClassifierConfig) -> Result<Self> {
        let mut c = Classifier::new(kind, support.cache.clone(), config.clone())?;
        c.train(support)?;
        Ok(c)
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    /// Per-iteration losses of the last training run; empty for training-free kinds.
    pub fn loss_trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn zip_model(&self) -> Option<&ZipModel> {
        match &self.model {
            Some(Model::Zip(z)) => Some(z),
            _ => None,
        }
    }

    pub fn logits(&self, query: &[f64]) -> Result<Vec<f64>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ClassifierError::UntrainedState(self.kind.name().into()))?;
        let feats = self.cache.features();
        if query.len() != feats.cols() {
            return Err(NumericsError::ShapeMismatch {
                expected: format!("{} channels", feats.cols()),
                actual: format!("{}", query.len()),
            }
            .into());
        }
        let n = self.cache.num_classes();
        match model {
            Model::Knn => {
                let mut logits = vec![f64::NEG_INFINITY; n];
                for (row, &l) in feats.iter_rows().zip(self.cache.labels()) {
                    let s = crate::numerics::cosine_sim(query, row)?;
                    logits[l] = logits[l].max(s);
                }
                Ok(logits)
            }
            Model::Protonet(protos) => protos
                .iter_rows()
                .map(|p| Ok(crate::numerics::cosine_sim(query, p)?))
                .collect(),
            Model::Linear(m) => m.logits(query),
            Model::ClipAdapter(m) => m.logits(query),
            Model::Tip { beta, cache } => sdpa_logits(query, cache, self.cache.labels(), n, *beta),
            Model::Zip(z) => z.logits(query),
        }
    }

    pub fn predict(&self, query: &[f64]) -> Result<usize> {
        self.logits(query).map(|l| argmax(&l))
    }

    /// Predictions for many queries, evaluated in parallel, returned in input order.
    pub fn predict_all(&self, queries: &[&[f64]]) -> Result<Vec<usize>> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cache() -> SupportCache {
        SupportCache::new(
            Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn cache_validation() {
        let f = Tensor2::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(SupportCache::new(f.clone(), vec![0], vec!["a".into(), "b".into()]).is_err());
        assert!(SupportCache::new(f.clone(), vec![3], vec!["a".into(), "b".into()]).is_err());
        assert!(SupportCache::new(f, vec![0, 1], vec!["a".into(), "b".into()]).is_err());
        let y = toy_cache().one_hot();
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn knn_returns_the_matching_support() {
        let c = Classifier::new(ClassifierKind::Knn, toy_cache(), ClassifierConfig::default()).unwrap();
        assert_eq!(c.predict(&[0.0, 2.0]).unwrap(), 1);
        assert_eq!(c.predict(&[1.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn protonet_bisector_ties() {
        let cache = SupportCache::new(
            Tensor2::from_rows(&[vec![2.0, 0.1], vec![2.0, -0.1], vec![0.1, 2.0], vec![-0.1, 2.0]]).unwrap(),
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let c = Classifier::new(ClassifierKind::Protonet, cache, ClassifierConfig::default()).unwrap();
        let l = c.logits(&[1.0, 1.0]).unwrap();
        assert!((l[0] - l[1]).abs() < 1e-15);
        assert_eq!(c.predict(&[1.0, 1.0]).unwrap(), 0);
        assert_eq!(c.predict(&[1.0, 1.1]).unwrap(), 1);
    }

    #[test]
    fn trained_kinds_refuse_to_predict_untrained() {
        for kind in ClassifierKind::ALL {
            let c = Classifier::new(kind, toy_cache(), ClassifierConfig::default()).unwrap();
            match c.predict(&[1.0, 0.0]) {
                Err(ClassifierError::UntrainedState(_)) => assert!(kind.needs_training()),
                Ok(_) => assert!(!kind.needs_training()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ClassifierKind::ALL {
            assert_eq!(ClassifierKind::parse(k.name()), Some(k));
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
