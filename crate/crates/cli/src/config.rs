//! The optional TOML config file: experiment keys at the top level plus
//! `[dataset]` and `[synthetic_dataset]` tables for the CLI alone.

use std::path::Path;

use mvrec::dataset::{BuildOptions, SyntheticManifestSpec};
use mvrec::eval::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_KEYS: &str = "\
CONFIG FILE (--config, TOML; unknown keys are rejected, flags win)
  classifiers                      list of knn, protonet, linearprob, clip_adapter, tip, tip_f, zip, zip_f
  shots                            K values, e.g. [1, 3, 5]
  seeds                            episode seeds, e.g. [0, 1, 2, 3, 4]
  categories                       restrict to these categories (empty = all)
  [classifier]
    zip_beta                       sharpness of the training-free cache models (32)
    tip_f_lambda                   triplet weight for tip_f (0)
  [classifier.train]
    beta                           sharpness while fine-tuning (1)
    alpha                          triplet margin (0.5)
    lambda                         triplet weight (4)
    iterations                     optimiser steps (500)
    seed                           seed for random initialisation (0)
    adapt_cache                    pass cache rows through the adapter too (true)
    train_cache                    update the cache rows (true)
    train_zip                      update the adapter (true)
    mining                         batch_hard or batch_all
  [classifier.train.adamw]
    lr, beta1, beta2, eps, weight_decay
  [classifier.clip_adapter]
    reduction                      hidden width is C / reduction (4)
    blend                          residual weight of the adapter output (0.2)
    logit_scale                    multiplier on prototype cosines (100)
  [augment]
    num_scale                      scales used, from the front of scale_factors (3)
    num_offset                     1 or 9 (9)
    scale_factors                  crop side multipliers ([1, 1.5, 2])
    offset_fraction                offset step as a fraction of the crop side (0.125)
    base_crop_fraction             base crop side as a fraction of the short image side (1/3)
    enable_rotation                add 0/90/180/270 rotations (false)
    enable_flip                    add horizontal flips (false)
    mask_mode                      instance, full_foreground or none
  [load]
    normalize_before_average       L2-normalise every view before averaging (false)
  [synthetic]
    channels                       embedding width (32)
    sigma_inst                     per-coordinate instance noise (0.05)
    sigma_view                     per-coordinate view noise (0.2)
    centers                        orthogonal or random
    seed                           generator seed (0)
    backbone_tag                   tag written into generated embedding files
  [paths]                          relative to the config file
    manifest, views, embeddings, output_dir
  [dataset]                        dataset-build only
    dataset_name                   name recorded in the manifest
    connectivity                   \"4\" or \"8\"
    min_area                       drop smaller components (1)
    seed                           split seed (0)
    exclude_types                  defect folders that are not classes ([good, combined])
    categories                     restrict to these categories
    known_classes                  reject any class outside this list when non-empty
    min_train_per_class            drop classes with fewer train instances (5)
    drop_single_class_categories   drop categories left with one class (true)
  [synthetic_dataset]              synthetic backend only
    name, num_classes, instances_per_class, image_side, seed
";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub dataset: BuildOptions,
    pub synthetic_dataset: SyntheticManifestSpec,
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::user("InvalidConfig", e)
}

fn take<T: for<'de> Deserialize<'de> + Default>(table: &mut toml::Table, key: &str) -> CliResult<T> {
    match table.remove(key) {
        Some(v) => v.try_into().map_err(|e| invalid(format!("[{key}]: {e}"))),
        None => Ok(T::default()),
    }
}

impl CliConfig {
    pub fn from_toml_str(s: &str) -> CliResult<Self> {
        let mut table: toml::Table = s.parse().map_err(invalid)?;
        let dataset = take(&mut table, "dataset")?;
        let synthetic_dataset = take(&mut table, "synthetic_dataset")?;
        let experiment = toml::Value::Table(table).try_into().map_err(invalid)?;
        Ok(CliConfig {
            experiment,
            dataset,
            synthetic_dataset,
        })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::user("IoError", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.experiment.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Experiment keys plus whichever extra tables the command used.
    pub fn echo(&self, dataset: bool, synthetic_dataset: bool) -> String {
        let mut table: toml::Table = toml::Table::try_from(&self.experiment).expect("serializable");
        if dataset {
            table.insert("dataset".into(), toml::Value::try_from(&self.dataset).expect("serializable"));
        }
        if synthetic_dataset {
            table.insert(
                "synthetic_dataset".into(),
                toml::Value::try_from(&self.synthetic_dataset).expect("serializable"),
            );
        }
        toml::to_string_pretty(&table).expect("serializable")
    }
}
