use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::components::{connected_components, Connectivity};
use super::mask::{Mask, Rect, RleMask};
use super::DatasetError;
use crate::rng;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One labelled defect instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectInstance {
    pub instance_id: String,
    /// Relative to the dataset root.
    pub image_path: String,
    pub category: String,
    pub class_label: String,
    pub mask: RleMask,
    pub bbox: Rect,
    pub area: u64,
    pub split: Split,
}

impl DefectInstance {
    pub fn image_size(&self) -> (u32, u32) {
        (self.mask.width, self.mask.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub class: String,
    pub train: usize,
    pub test: usize,
}

/// Instance-level dataset description.
///
/// Instances are kept sorted by class order, then by instance id. The JSON
/// form written by [`DatasetManifest::to_json`] is canonical: parsing and
/// re-serialising reproduces the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub dataset_name: String,
    pub classes: Vec<String>,
    pub counts: Vec<ClassCounts>,
    pub instances: Vec<DefectInstance>,
}

impl DatasetManifest {
    pub fn new(
        dataset_name: impl Into<String>,
        classes: Vec<String>,
        mut instances: Vec<DefectInstance>,
    ) -> Result<Self, DatasetError> {
        let index: HashMap<&str, usize> =
            classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        for inst in &instances {
            if !index.contains_key(inst.class_label.as_str()) {
                return Err(DatasetError::UnknownClass(inst.class_label.clone()));
            }
        }
        instances.sort_by(|a, b| {
            index[a.class_label.as_str()]
                .cmp(&index[b.class_label.as_str()])
                .then_with(|| a.instance_id.cmp(&b.instance_id))
        });
        let counts = classes
            .iter()
            .map(|c| ClassCounts {
                class: c.clone(),
                train: instances
                    .iter()
                    .filter(|i| &i.class_label == c && i.split == Split::Train)
                    .count(),
                test: instances
                    .iter()
                    .filter(|i| &i.class_label == c && i.split == Split::Test)
                    .count(),
            })
            .collect();
        let m = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            dataset_name: dataset_name.into(),
            classes,
            counts,
            instances,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DatasetError::InvalidManifest(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let classes: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
        if classes.len() != self.classes.len() {
            return Err(DatasetError::InvalidManifest("duplicate class names".into()));
        }
        let mut ids = HashSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(DatasetError::InvalidManifest(format!(
                    "duplicate instance id {}",
                    inst.instance_id
                )));
            }
            if !classes.contains(inst.class_label.as_str()) {
                return Err(DatasetError::UnknownClass(inst.class_label.clone()));
            }
            inst.mask.validate()?;
            if inst.mask.area() != inst.area || inst.mask.bbox() != Some(inst.bbox) {
                return Err(DatasetError::InvalidManifest(format!(
                    "instance {}: area/bbox disagree with its mask",
                    inst.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn instance(&self, id: &str) -> Option<&DefectInstance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DefectInstance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    /// Categories in order of first appearance in `classes`.
    pub fn categories(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for class in &self.classes {
            if let Some(inst) = self.instances.iter().find(|i| &i.class_label == class) {
                if !out.contains(&inst.category) {
                    out.push(inst.category.clone());
                }
            }
        }
        out
    }

    /// Sub-manifest holding one category's classes and instances.
    pub fn for_category(&self, category: &str) -> Result<DatasetManifest, DatasetError> {
        let instances: Vec<DefectInstance> = self
            .instances
            .iter()
            .filter(|i| i.category == category)
            .cloned()
            .collect();
        if instances.is_empty() {
            return Err(DatasetError::UnknownClass(format!("category {category}")));
        }
        let classes = self
            .classes
            .iter()
            .filter(|c| instances.iter().any(|i| &i.class_label == *c))
            .cloned()
            .collect();
        DatasetManifest::new(self.dataset_name.clone(), classes, instances)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        let m: DatasetManifest =
            serde_json::from_str(s).map_err(|e| DatasetError::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json()).map_err(|e| DatasetError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let s = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Where the raw annotations live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetLayout {
    /// `<root>/<category>/test/<type>/<stem>.png` with image-level masks at
    /// `<root>/<category>/ground_truth/<type>/<stem>_mask.png`.
    MvtecAd { root: PathBuf },
    /// Box annotations in a CSV with header `image,category,class,x,y,w,h`;
    /// image paths are relative to `images_root`.
    BboxCsv {
        images_root: PathBuf,
        annotations: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    pub dataset_name: String,
    pub connectivity: Connectivity,
    /// Components with fewer pixels are dropped.
    pub min_area: u64,
    pub seed: u64,
    /// Defect-type folders that are never classes.
    pub exclude_types: Vec<String>,
    /// Restrict to these categories (all when empty).
    pub categories: Vec<String>,
    /// When non-empty, any class outside this list is an error.
    pub known_classes: Vec<String>,
    /// Drop classes whose train split would hold fewer instances than this.
    pub min_train_per_class: usize,
    /// Drop categories left with a single class (nothing to classify).
    pub drop_single_class_categories: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            dataset_name: "dataset".into(),
            connectivity: Connectivity::Eight,
            min_area: 1,
            seed: 0,
            exclude_types: vec!["good".into(), "combined".into()],
            categories: Vec::new(),
            known_classes: Vec::new(),
            min_train_per_class: 5,
            drop_single_class_categories: true,
        }
    }
}

/// Number of a class's `n` instances that go to the train split: `ceil(n/2)`.
pub fn train_count(n: usize) -> usize {
    n.div_ceil(2)
}

/// Deterministic per-class 50/50 split.
///
/// Instances of each class are sorted by id, shuffled with the seeded
/// stream named after the class, and the first [`train_count`] become train.
pub fn assign_splits(instances: &mut [DefectInstance], seed: u64) {
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_class.entry(inst.class_label.clone()).or_default().push(i);
    }
    for (class, mut idx) in by_class {
        idx.sort_by(|&a, &b| instances[a].instance_id.cmp(&instances[b].instance_id));
        let mut rng = rng::stream_rng(seed, &format!("split:{class}"));
        let n = idx.len();
        rng::partial_shuffle(&mut rng, &mut idx, n);
        let n_train = train_count(n);
        for (pos, &i) in idx.iter().enumerate() {
            instances[i].split = if pos < n_train { Split::Train } else { Split::Test };
        }
    }
}

fn list_dir_sorted(path: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| DatasetError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

struct PendingImage {
    category: String,
    class_label: String,
    image_rel: String,
    stem: String,
    mask_path: PathBuf,
}

fn mvtec_instances(
    root: &Path,
    opts: &BuildOptions,
) -> Result<Vec<DefectInstance>, DatasetError> {
    let mut pending = Vec::new();
    for cat_dir in list_dir_sorted(root)? {
        if !cat_dir.is_dir() {
            continue;
        }
        let category = file_name(&cat_dir);
        if !opts.categories.is_empty() && !opts.categories.contains(&category) {
            continue;
        }
        let test_dir = cat_dir.join("test");
        if !test_dir.is_dir() {
            continue;
        }
        for type_dir in list_dir_sorted(&test_dir)? {
            if !type_dir.is_dir() {
                continue;
            }
            let defect_type = file_name(&type_dir);
            if opts.exclude_types.contains(&defect_type) {
                continue;
            }
            let class_label = format!("{category}/{defect_type}");
            if !opts.known_classes.is_empty() && !opts.known_classes.contains(&class_label) {
                return Err(DatasetError::UnknownClass(class_label));
            }
            let gt_dir = cat_dir.join("ground_truth").join(&defect_type);
            for img in list_dir_sorted(&type_dir)? {
                if !is_image(&img) {
                    continue;
                }
                let stem = img
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mask_path = gt_dir.join(format!("{stem}_mask.png"));
                if !mask_path.is_file() {
                    return Err(DatasetError::MissingMask(img.display().to_string()));
                }
                pending.push(PendingImage {
                    category: category.clone(),
                    class_label: class_label.clone(),
                    image_rel: format!("{category}/test/{defect_type}/{}", file_name(&img)),
                    stem,
                    mask_path,
                });
            }
        }
    }

    let per_image: Vec<Result<Vec<DefectInstance>, DatasetError>> = pending
        .par_iter()
        .map(|p| {
            let gray = image::open(&p.mask_path)
                .map_err(|e| DatasetError::Image {
                    path: p.mask_path.display().to_string(),
                    message: e.to_string(),
                })?
                .to_luma8();
            let mask = Mask::from_gray(&gray);
            let labeling = connected_components(&mask, opts.connectivity);
            Ok(labeling
                .components
                .iter()
                .filter(|c| c.area >= opts.min_area)
                .map(|c| {
                    let comp = labeling.component_mask(c.label);
                    DefectInstance {
                        instance_id: format!("{}:{}:{}", p.class_label, p.stem, c.label),
                        image_path: p.image_rel.clone(),
                        category: p.category.clone(),
                        class_label: p.class_label.clone(),
                        mask: comp.to_rle(),
                        bbox: c.bbox,
                        area: c.area,
                        split: Split::Train,
                    }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_image {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct BboxRow {
    image: String,
    category: String,
    class: String,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

fn bbox_instances(
    images_root: &Path,
    annotations: &Path,
    opts: &BuildOptions,
) -> Result<Vec<DefectInstance>, DatasetError> {
    let mut reader = csv::Reader::from_path(annotations).map_err(|e| DatasetError::Format(
        format!("{}: {e}", annotations.display()),
    ))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<BboxRow>() {
        rows.push(row.map_err(|e| DatasetError::Format(format!("{}: {e}", annotations.display())))?);
    }
    let mut dims_cache: HashMap<String, (u32, u32)> = HashMap::new();
    let mut per_image_counter: HashMap<String, u32> = HashMap::new();
    let mut out = Vec::new();
    for row in rows {
        if !opts.categories.is_empty() && !opts.categories.contains(&row.category) {
            continue;
        }
        let class_label = format!("{}/{}", row.category, row.class);
        if !opts.known_classes.is_empty() && !opts.known_classes.contains(&class_label) {
            return Err(DatasetError::UnknownClass(class_label));
        }
        let (w, h) = match dims_cache.get(&row.image) {
            Some(d) => *d,
            None => {
                let path = images_root.join(&row.image);
                let d = image::image_dimensions(&path).map_err(|e| DatasetError::Image {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                dims_cache.insert(row.image.clone(), d);
                d
            }
        };
        let rect = Rect::new(row.x, row.y, row.w, row.h);
        if row.w == 0 || row.h == 0 || !rect.fits_within(w, h) {
            return Err(DatasetError::Format(format!(
                "box {rect:?} outside image {} ({w}x{h})",
                row.image
            )));
        }
        let mut mask = Mask::new(w, h);
        mask.fill_rect(rect);
        if mask.area() < opts.min_area {
            continue;
        }
        let counter = per_image_counter.entry(row.image.clone()).or_insert(0);
        *counter += 1;
        let stem = Path::new(&row.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push(DefectInstance {
            instance_id: format!("{class_label}:{stem}:{counter}"),
            image_path: row.image.clone(),
            category: row.category.clone(),
            class_label,
            area: mask.area(),
            bbox: rect,
            mask: mask.to_rle(),
            split: Split::Train,
        });
    }
    Ok(out)
}

/// Builds an instance-level manifest from raw annotations.
///
/// Mask datasets yield one instance per connected component of each
/// image-level mask; box datasets one per box. Classes are
/// `<category>/<type>`, ordered by name.
pub fn build_manifest(
    layout: &DatasetLayout,
    opts: &BuildOptions,
) -> Result<DatasetManifest, DatasetError> {
    let mut instances = match layout {
        DatasetLayout::MvtecAd { root } => {
            if !root.is_dir() {
                return Err(DatasetError::io(
                    root,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
                ));
            }
            mvtec_instances(root, opts)?
        }
        DatasetLayout::BboxCsv {
            images_root,
            annotations,
        } => bbox_instances(images_root, annotations, opts)?,
    };

    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for inst in &instances {
        *sizes.entry(inst.class_label.clone()).or_default() += 1;
    }
    let mut keep: HashSet<String> = sizes
        .iter()
        .filter(|(_, &n)| train_count(n) >= opts.min_train_per_class)
        .map(|(c, _)| c.clone())
        .collect();
    if opts.drop_single_class_categories {
        let class_category: HashMap<&str, &str> = instances
            .iter()
            .map(|i| (i.class_label.as_str(), i.category.as_str()))
            .collect();
        let mut per_category: HashMap<&str, usize> = HashMap::new();
        for class in &keep {
            *per_category.entry(class_category[class.as_str()]).or_default() += 1;
        }
        keep.retain(|class| per_category[class_category[class.as_str()]] >= 2);
    }
    instances.retain(|i| keep.contains(&i.class_label));
    assign_splits(&mut instances, opts.seed);
    let mut classes: Vec<String> = keep.into_iter().collect();
    classes.sort();
    DatasetManifest::new(opts.dataset_name.clone(), classes, instances)
}
