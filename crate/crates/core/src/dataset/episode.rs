use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use super::DatasetError;
use crate::rng;

/// Default support samplings per experiment.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeItem {
    pub instance_id: String,
    /// Index into the manifest's class list.
    pub class: usize,
}

/// One N-way K-shot task: K train instances per class, the whole test split as queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

/// Samples `k` support instances per class from the train split.
///
/// For class `c`, its train instance ids are sorted, then a partial
/// Fisher-Yates shuffle of length `k` is run with
/// [`rng::stream_rng`]`(seed, "support:" + c)`; the first `k` entries in draw
/// order form the class's support. Support lists classes in manifest order.
pub fn sample_support(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Episode, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidArgument("K must be at least 1".into()));
    }
    let mut support = Vec::with_capacity(manifest.classes.len() * k);
    for (ci, class) in manifest.classes.iter().enumerate() {
        let mut ids: Vec<&str> = manifest
            .split(Split::Train)
            .filter(|i| &i.class_label == class)
            .map(|i| i.instance_id.as_str())
            .collect();
        if ids.len() < k {
            return Err(DatasetError::InsufficientShots {
                class: class.clone(),
                available: ids.len(),
                requested: k,
            });
        }
        ids.sort_unstable();
        let mut r = rng::stream_rng(seed, &format!("support:{class}"));
        rng::partial_shuffle(&mut r, &mut ids, k);
        support.extend(ids[..k].iter().map(|id| EpisodeItem {
            instance_id: id.to_string(),
            class: ci,
        }));
    }
    let query = manifest
        .split(Split::Test)
        .map(|i| EpisodeItem {
            instance_id: i.instance_id.clone(),
            class: manifest.class_index(&i.class_label).expect("validated manifest"),
        })
        .collect();
    Ok(Episode {
        support,
        query,
        k,
        n: manifest.classes.len(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{synthetic_manifest, SyntheticManifestSpec};
    use std::collections::HashSet;

    fn manifest() -> DatasetManifest {
        synthetic_manifest(&SyntheticManifestSpec {
            num_classes: 3,
            instances_per_class: 8,
            ..SyntheticManifestSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn one_shot_three_classes() {
        let m = manifest();
        let e = sample_support(&m, 1, 0).unwrap();
        assert_eq!(e.support.len(), 3);
        let classes: Vec<usize> = e.support.iter().map(|s| s.class).collect();
        assert_eq!(classes, vec![0, 1, 2]);
        assert_eq!(e.query.len(), 12);
        assert_eq!(e.n, 3);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let m = manifest();
        let a = sample_support(&m, 3, 4).unwrap();
        assert_eq!(a, sample_support(&m, 3, 4).unwrap());
        let sup: HashSet<&str> = a.support.iter().map(|s| s.instance_id.as_str()).collect();
        assert!(a.query.iter().all(|q| !sup.contains(q.instance_id.as_str())));
        let distinct: HashSet<Vec<String>> = DEFAULT_SEEDS
            .iter()
            .map(|&s| {
                sample_support(&m, 2, s)
                    .unwrap()
                    .support
                    .into_iter()
                    .map(|i| i.instance_id)
                    .collect()
            })
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn insufficient_shots() {
        let m = manifest();
        match sample_support(&m, 5, 0) {
            Err(DatasetError::InsufficientShots { available, requested, .. }) => {
                assert_eq!((available, requested), (4, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sample_support(&m, 0, 0).is_err());
    }
}
