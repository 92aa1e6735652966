//! Ablation tables: region-context handling, augmentation combinations and
//! which parameter groups are fine-tuned.

use serde::{Deserialize, Serialize};

use super::{run_variants, EvalError, ExperimentConfig, ResultTable, Variant};
use crate::classifiers::ClassifierKind;
use crate::dataset::DatasetManifest;
use crate::embedding::EmbeddingStore;
use crate::geometry::{AugmentCombo, AugmentConfig};

/// One table per embedding variant (crop style × mask mode), same classifiers.
pub fn region_context_ablation(
    manifest: &DatasetManifest,
    variants: &[(String, &EmbeddingStore)],
    config: &ExperimentConfig,
) -> Result<ResultTable, EvalError> {
    config.validate()?;
    let vs: Vec<Variant<'_>> = variants
        .iter()
        .map(|(name, store)| Variant {
            name: name.clone(),
            store,
            config: config.classifier.clone(),
            classifiers: config.classifiers.clone(),
        })
        .collect();
    run_variants(manifest, &vs, &config.shots, &config.seeds, &config.categories)
}

/// Rows named after each combination. Every store must carry exactly the
/// view count its combination produces from `base`.
pub fn augmentation_ablation(
    manifest: &DatasetManifest,
    stores: &[(AugmentCombo, &EmbeddingStore)],
    base: &AugmentConfig,
    config: &ExperimentConfig,
) -> Result<ResultTable, EvalError> {
    config.validate()?;
    for (combo, store) in stores {
        let expected = combo.config(base).view_count();
        if let Some(bad) = store.iter().find(|e| e.num_views() != expected) {
            return Err(EvalError::InvalidConfig(format!(
                "augmentation {} expects {expected} views, instance {} has {}",
                combo.name(),
                bad.instance_id,
                bad.num_views()
            )));
        }
    }
    let vs: Vec<Variant<'_>> = stores
        .iter()
        .map(|(combo, store)| Variant {
            name: combo.name().to_string(),
            store,
            config: config.classifier.clone(),
            classifiers: config.classifiers.clone(),
        })
        .collect();
    run_variants(manifest, &vs, &config.shots, &config.seeds, &config.categories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSetting {
    CacheAndZip,
    CacheOnly,
    ZipOnly,
    /// Nothing trained: the cache model at the fine-tuning β.
    Frozen,
}

impl TrainingSetting {
    pub const ALL: [TrainingSetting; 4] = [
        TrainingSetting::CacheOnly,
        TrainingSetting::ZipOnly,
        TrainingSetting::CacheAndZip,
        TrainingSetting::Frozen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingSetting::CacheAndZip => "cache+zip",
            TrainingSetting::CacheOnly => "cache",
            TrainingSetting::ZipOnly => "zip",
            TrainingSetting::Frozen => "frozen",
        }
    }

    /// `(train_cache, train_zip)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            TrainingSetting::CacheAndZip => (true, true),
            TrainingSetting::CacheOnly => (true, false),
            TrainingSetting::ZipOnly => (false, true),
            TrainingSetting::Frozen => (false, false),
        }
    }
}

/// The fine-tuned cache model under each trainable-group setting.
pub fn training_ablation(
    manifest: &DatasetManifest,
    store: &EmbeddingStore,
    config: &ExperimentConfig,
) -> Result<ResultTable, EvalError> {
    config.validate()?;
    let vs: Vec<Variant<'_>> = TrainingSetting::ALL
        .iter()
        .map(|s| {
            let mut c = config.classifier.clone();
            (c.train.train_cache, c.train.train_zip) = s.flags();
            Variant {
                name: s.name().to_string(),
                store,
                config: c,
                classifiers: vec![ClassifierKind::ZipF],
            }
        })
        .collect();
    run_variants(manifest, &vs, &config.shots, &config.seeds, &config.categories)
}

/// All ablation tables that had inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub region_context: Option<ResultTable>,
    pub augmentation: Option<ResultTable>,
    pub training: ResultTable,
}

impl AblationReport {
    pub fn tables(&self) -> Vec<(&'static str, &ResultTable)> {
        let mut v = Vec::new();
        if let Some(t) = &self.region_context {
            v.push(("region_context", t));
        }
        if let Some(t) = &self.augmentation {
            v.push(("augmentation", t));
        }
        v.push(("training", &self.training));
        v
    }
}

/// Runs each ablation whose inputs are present; the training table always runs on `main`.
pub fn ablation_suite(
    manifest: &DatasetManifest,
    main: &EmbeddingStore,
    region_context: &[(String, &EmbeddingStore)],
    augmentation: &[(AugmentCombo, &EmbeddingStore)],
    config: &ExperimentConfig,
) -> Result<AblationReport, EvalError> {
    Ok(AblationReport {
        region_context: (!region_context.is_empty())
            .then(|| region_context_ablation(manifest, region_context, config))
            .transpose()?,
        augmentation: (!augmentation.is_empty())
            .then(|| augmentation_ablation(manifest, augmentation, &config.augment, config))
            .transpose()?,
        training: training_ablation(manifest, main, config)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_manifest, SyntheticManifestSpec};
    use crate::embedding::{synthetic_store, LoadOptions};

    fn manifest() -> DatasetManifest {
        synthetic_manifest(&SyntheticManifestSpec {
            num_classes: 3,
            instances_per_class: 6,
            ..SyntheticManifestSpec::default()
        })
        .unwrap()
    }

    fn config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            classifiers: vec![ClassifierKind::Zip],
            shots: vec![2],
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        };
        c.classifier.train.iterations = 15;
        c.synthetic.channels = 8;
        c
    }

    #[test]
    fn frozen_matches_zip_at_the_same_beta() {
        let m = manifest();
        let cfg = config();
        let (store, _) = synthetic_store(&m, &cfg.synthetic, &AugmentConfig::single_view(), LoadOptions::default()).unwrap();
        let t = training_ablation(&m, &store, &cfg).unwrap();
        assert_eq!(t.variants(), &["cache", "zip", "cache+zip", "frozen"]);
        let mut zc = cfg.clone();
        zc.classifier.zip_beta = zc.classifier.train.beta;
        let zip = super::super::run_experiment(&m, &store, &zc).unwrap();
        let frozen: Vec<_> = t.rows().iter().filter(|r| r.variant == "frozen").map(|r| (r.seed, r.correct)).collect();
        let plain: Vec<_> = zip.rows().iter().map(|r| (r.seed, r.correct)).collect();
        assert_eq!(frozen, plain);
    }

    #[test]
    fn augmentation_view_counts_are_checked() {
        let m = manifest();
        let cfg = config();
        let base = AugmentConfig::default();
        let stores: Vec<(AugmentCombo, EmbeddingStore)> = [AugmentCombo::None, AugmentCombo::ScaleOffset]
            .into_iter()
            .map(|c| (c, synthetic_store(&m, &cfg.synthetic, &c.config(&base), LoadOptions::default()).unwrap().0))
            .collect();
        let refs: Vec<(AugmentCombo, &EmbeddingStore)> = stores.iter().map(|(c, s)| (*c, s)).collect();
        let t = augmentation_ablation(&m, &refs, &base, &cfg).unwrap();
        assert_eq!(t.variants(), &["none", "scale+offset"]);
        let swapped = vec![(AugmentCombo::None, refs[1].1)];
        assert!(matches!(augmentation_ablation(&m, &swapped, &base, &cfg), Err(EvalError::InvalidConfig(_))));
    }

    #[test]
    fn suite_skips_missing_inputs() {
        let m = manifest();
        let cfg = config();
        let (store, _) = synthetic_store(&m, &cfg.synthetic, &AugmentConfig::single_view(), LoadOptions::default()).unwrap();
        let r = ablation_suite(&m, &store, &[("mask".into(), &store)], &[], &cfg).unwrap();
        assert!(r.augmentation.is_none());
        assert_eq!(r.tables().len(), 2);
    }
}
