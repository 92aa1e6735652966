use serde::{Deserialize, Serialize};

use super::manifest::{assign_splits, DatasetManifest, DefectInstance, Split};
use super::mask::{Mask, Rect};
use super::DatasetError;
use crate::rng;

/// Shape of a generated manifest with no backing images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticManifestSpec {
    pub name: String,
    pub num_classes: usize,
    pub instances_per_class: usize,
    pub image_side: u32,
    pub seed: u64,
}

impl Default for SyntheticManifestSpec {
    fn default() -> Self {
        SyntheticManifestSpec {
            name: "synthetic".into(),
            num_classes: 5,
            instances_per_class: 20,
            image_side: 96,
            seed: 0,
        }
    }
}

/// A single-category manifest with square defect masks at seeded positions.
pub fn synthetic_manifest(spec: &SyntheticManifestSpec) -> Result<DatasetManifest, DatasetError> {
    if spec.num_classes < 2 || spec.instances_per_class < 2 || spec.image_side < 8 {
        return Err(DatasetError::InvalidArgument(
            "synthetic manifest needs >= 2 classes, >= 2 instances per class and side >= 8".into(),
        ));
    }
    let side = spec.image_side;
    let classes: Vec<String> = (0..spec.num_classes)
        .map(|c| format!("{}/class_{c:02}", spec.name))
        .collect();
    let mut instances = Vec::new();
    for class in &classes {
        let mut r = rng::stream_rng(spec.seed, &format!("layout:{class}"));
        for i in 0..spec.instances_per_class {
            let w = 2 + rng::bounded(&mut r, (side / 8) as usize) as u32;
            let h = 2 + rng::bounded(&mut r, (side / 8) as usize) as u32;
            let x = rng::bounded(&mut r, (side - w) as usize) as u32;
            let y = rng::bounded(&mut r, (side - h) as usize) as u32;
            let rect = Rect::new(x, y, w, h);
            let mut mask = Mask::new(side, side);
            mask.fill_rect(rect);
            let stem = format!("{}_{i:03}", class.replace('/', "_"));
            instances.push(DefectInstance {
                instance_id: format!("{class}:{stem}:1"),
                image_path: format!("{stem}.png"),
                category: spec.name.clone(),
                class_label: class.clone(),
                area: mask.area(),
                bbox: rect,
                mask: mask.to_rle(),
                split: Split::Train,
            });
        }
    }
    assign_splits(&mut instances, spec.seed);
    DatasetManifest::new(spec.name.clone(), classes, instances)
}
