//! Deterministic stand-in for the image encoder.
//!
//! View `v` of instance `i` with class `c` is
//! `normalize(center[c] + offset_i + noise_iv)`, where `offset_i` has
//! i.i.d. `N(0, σ_inst²)` coordinates and `noise_iv` i.i.d. `N(0, σ_view²)`.
//! Each instance draws from its own stream (`"embed:" + instance_id`): the
//! offset first, then one noise vector per view in ascending view id.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingFile, EmbeddingRecord, EmbeddingStore, LoadOptions};
use crate::dataset::DatasetManifest;
use crate::geometry::{generate_views, group_views, AugmentConfig, ViewSpec};
use crate::numerics::l2_norm;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterKind {
    /// Class `c` sits on basis vector `e_c`; needs `N <= C`.
    #[default]
    Orthogonal,
    /// Unit-normalized Gaussian directions from stream `"centers"`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticEmbeddingConfig {
    pub channels: usize,
    pub sigma_inst: f64,
    pub sigma_view: f64,
    pub centers: CenterKind,
    pub seed: u64,
    pub backbone_tag: String,
}

impl Default for SyntheticEmbeddingConfig {
    fn default() -> Self {
        SyntheticEmbeddingConfig {
            channels: 32,
            sigma_inst: 0.05,
            sigma_view: 0.2,
            centers: CenterKind::Orthogonal,
            seed: 0,
            backbone_tag: "synthetic".into(),
        }
    }
}

fn centers(n: usize, config: &SyntheticEmbeddingConfig) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    let c = config.channels;
    match config.centers {
        CenterKind::Orthogonal => {
            if n > c {
                return Err(EmbeddingError::InvalidArgument(format!(
                    "{n} orthogonal centers need at least {n} channels, have {c}"
                )));
            }
            Ok((0..n)
                .map(|k| (0..c).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect())
        }
        CenterKind::Random => {
            let mut r = rng::stream_rng(config.seed, "centers");
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            Ok((0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..c).map(|_| normal.sample(&mut r)).collect();
                    let norm = l2_norm(&v);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect())
        }
    }
}

/// Embeddings for every record of `views`; instances must be in `manifest`.
pub fn synthetic_embeddings(
    manifest: &DatasetManifest,
    views: &[ViewSpec],
    config: &SyntheticEmbeddingConfig,
) -> Result<EmbeddingFile, EmbeddingError> {
    let bad = |m: String| Err(EmbeddingError::InvalidArgument(m));
    if config.channels == 0 {
        return bad("channels must be positive".into());
    }
    if !(config.sigma_inst >= 0.0 && config.sigma_view >= 0.0)
        || !config.sigma_inst.is_finite()
        || !config.sigma_view.is_finite()
    {
        return bad("noise scales must be finite and non-negative".into());
    }
    let centers = centers(manifest.classes.len(), config)?;
    let inst_noise = Normal::new(0.0, config.sigma_inst).expect("validated sigma");
    let view_noise = Normal::new(0.0, config.sigma_view).expect("validated sigma");
    let mut file = EmbeddingFile::new(config.channels as u32, config.backbone_tag.clone());
    for (id, view_ids) in group_views(views) {
        let Some(inst) = manifest.instance(&id) else {
            return bad(format!("instance {id} is not in the manifest"));
        };
        let class = manifest.class_index(&inst.class_label).expect("validated manifest");
        let mut r = rng::stream_rng(config.seed, &format!("embed:{id}"));
        let base: Vec<f64> = centers[class]
            .iter()
            .map(|c| c + inst_noise.sample(&mut r))
            .collect();
        for view_id in view_ids {
            let mut v: Vec<f64> = base.iter().map(|b| b + view_noise.sample(&mut r)).collect();
            let norm = l2_norm(&v);
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            file.push(EmbeddingRecord {
                instance_id: id.clone(),
                view_id,
                values: v.into_iter().map(|x| x as f32).collect(),
            })?;
        }
    }
    Ok(file)
}

/// Views for every manifest instance under `augment`, their synthetic
/// embeddings, loaded into a store.
pub fn synthetic_store(
    manifest: &DatasetManifest,
    config: &SyntheticEmbeddingConfig,
    augment: &AugmentConfig,
    opts: LoadOptions,
) -> Result<(EmbeddingStore, Vec<ViewSpec>), EmbeddingError> {
    let mut views = Vec::new();
    for inst in &manifest.instances {
        views.extend(
            generate_views(inst, augment).map_err(|e| EmbeddingError::InvalidArgument(e.to_string()))?,
        );
    }
    let file = synthetic_embeddings(manifest, &views, config)?;
    let (store, report) = EmbeddingStore::from_file(&file, &views, opts)?;
    report.require_complete()?;
    Ok((store, views))
}
