//! Multi-view crop generation for region-context augmentation.
//!
//! Each defect instance yields `num_scale × num_offset` square crops
//! (times 4 with rotation, times 2 with flip). Crops are centred on the mask
//! centroid, shifted on a 3×3 grid of `±δ` offsets and translated back
//! inside the image when they cross a border.

mod render;
mod views_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DefectInstance, Rect};

pub use render::{apply_transform, invert_transform, render_view, RenderedView};
pub use views_file::{group_views, read_views_file, write_views_file, write_views_to};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("EmptyInstance: instance {0} has an empty mask")]
    EmptyInstance(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("CropOutOfBounds: crop {crop:?} outside {width}x{height} image")]
    CropOutOfBounds { crop: Rect, width: u32, height: u32 },
    #[error("Format: views file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GeometryError {
    pub fn kind(&self) -> &'static str {
        match self {
            GeometryError::EmptyInstance(_) => "EmptyInstance",
            GeometryError::InvalidConfig(_) => "InvalidConfig",
            GeometryError::CropOutOfBounds { .. } => "CropOutOfBounds",
            GeometryError::Format { .. } => "Format",
            GeometryError::Io { .. } => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn inverse(self) -> Rotation {
        match self {
            Rotation::R0 => Rotation::R0,
            Rotation::R90 => Rotation::R270,
            Rotation::R180 => Rotation::R180,
            Rotation::R270 => Rotation::R90,
        }
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        r.degrees()
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;
    fn try_from(d: u16) -> Result<Self, String> {
        match d {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(format!("rotation must be 0, 90, 180 or 270, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flip {
    None,
    Horizontal,
}

/// Alpha channel handed to the encoder with each patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// The instance mask.
    #[default]
    Instance,
    /// All-ones alpha ("without mask" ablation).
    FullForeground,
    /// No alpha at all (plain encoder).
    None,
}

/// One augmented crop of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub instance_id: String,
    pub view_id: u32,
    pub crop: Rect,
    pub scale_index: u32,
    pub offset_index: u32,
    pub rotation: Rotation,
    pub flip: Flip,
    pub mask_mode: MaskMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub num_scale: usize,
    /// 1 (centre only) or 9 (3×3 grid).
    pub num_offset: usize,
    /// Side multipliers; the first `num_scale` are used.
    pub scale_factors: Vec<f64>,
    /// Offset step `δ` as a fraction of the crop side.
    pub offset_fraction: f64,
    /// Base crop side as a fraction of `min(width, height)`.
    pub base_crop_fraction: f64,
    pub enable_rotation: bool,
    pub enable_flip: bool,
    pub mask_mode: MaskMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            num_scale: 3,
            num_offset: 9,
            scale_factors: vec![1.0, 1.5, 2.0],
            offset_fraction: 0.125,
            base_crop_fraction: 1.0 / 3.0,
            enable_rotation: false,
            enable_flip: false,
            mask_mode: MaskMode::Instance,
        }
    }
}

impl AugmentConfig {
    /// No augmentation: one centred crop at the first scale factor.
    pub fn single_view() -> Self {
        AugmentConfig {
            num_scale: 1,
            num_offset: 1,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidConfig(m));
        if self.num_offset != 1 && self.num_offset != 9 {
            return bad(format!("num_offset must be 1 or 9, got {}", self.num_offset));
        }
        if self.num_scale == 0 || self.num_scale > self.scale_factors.len() {
            return bad(format!(
                "num_scale {} needs as many scale_factors (have {})",
                self.num_scale,
                self.scale_factors.len()
            ));
        }
        if self.scale_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("scale factors must be positive".into());
        }
        if !(self.offset_fraction >= 0.0 && self.offset_fraction < 0.5) {
            return bad("offset_fraction must lie in [0, 0.5)".into());
        }
        if !(self.base_crop_fraction > 0.0 && self.base_crop_fraction <= 1.0) {
            return bad("base_crop_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Views per instance.
    pub fn view_count(&self) -> usize {
        self.num_scale
            * self.num_offset
            * if self.enable_rotation { 4 } else { 1 }
            * if self.enable_flip { 2 } else { 1 }
    }
}

/// Offsets in units of `δ`, row-major over `dy` then `dx`.
pub fn offset_grid(num_offset: usize) -> Vec<(i32, i32)> {
    if num_offset == 9 {
        (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
            .collect()
    } else {
        vec![(0, 0)]
    }
}

/// Side of the square crop at `scale_factor`, clamped to `[1, min(w, h)]`.
pub fn crop_side(image_size: (u32, u32), config: &AugmentConfig, scale_factor: f64) -> u32 {
    let short = image_size.0.min(image_size.1);
    let side = (config.base_crop_fraction * short as f64 * scale_factor).round();
    (side as u32).clamp(1, short)
}

/// Top-left corner of a `side`-wide square centred at `centre`, rounded half
/// away from zero and translated into `[0, extent - side]`.
pub fn place_crop(centre: f64, side: u32, extent: u32) -> u32 {
    let start = (centre - side as f64 / 2.0).round();
    start.clamp(0.0, (extent - side) as f64) as u32
}

/// Views for a region given its centroid, in `(scale, offset, rotation, flip)` order.
pub fn views_for_region(
    instance_id: &str,
    centroid: (f64, f64),
    image_size: (u32, u32),
    config: &AugmentConfig,
) -> Result<Vec<ViewSpec>, GeometryError> {
    config.validate()?;
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(GeometryError::InvalidConfig("image size must be positive".into()));
    }
    let rotations: &[Rotation] = if config.enable_rotation {
        &Rotation::ALL
    } else {
        &[Rotation::R0]
    };
    let flips: &[Flip] = if config.enable_flip {
        &[Flip::None, Flip::Horizontal]
    } else {
        &[Flip::None]
    };
    let mut out = Vec::with_capacity(config.view_count());
    for (si, &factor) in config.scale_factors[..config.num_scale].iter().enumerate() {
        let side = crop_side(image_size, config, factor);
        let delta = side as f64 * config.offset_fraction;
        for (oi, (dx, dy)) in offset_grid(config.num_offset).into_iter().enumerate() {
            let x = place_crop(centroid.0 + dx as f64 * delta, side, image_size.0);
            let y = place_crop(centroid.1 + dy as f64 * delta, side, image_size.1);
            for &rotation in rotations {
                for &flip in flips {
                    out.push(ViewSpec {
                        instance_id: instance_id.to_string(),
                        view_id: out.len() as u32,
                        crop: Rect::new(x, y, side, side),
                        scale_index: si as u32,
                        offset_index: oi as u32,
                        rotation,
                        flip,
                        mask_mode: config.mask_mode,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// The `V` view specifications of one instance; image size comes from its mask.
pub fn generate_views(
    instance: &DefectInstance,
    config: &AugmentConfig,
) -> Result<Vec<ViewSpec>, GeometryError> {
    let centroid = instance
        .mask
        .centroid()
        .ok_or_else(|| GeometryError::EmptyInstance(instance.instance_id.clone()))?;
    views_for_region(&instance.instance_id, centroid, instance.image_size(), config)
}

/// Augmentation combinations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentCombo {
    None,
    Scale,
    Rotate,
    Flip,
    Offset,
    ScaleRotate,
    ScaleFlip,
    ScaleOffset,
}

impl AugmentCombo {
    pub const ALL: [AugmentCombo; 8] = [
        AugmentCombo::None,
        AugmentCombo::Scale,
        AugmentCombo::Rotate,
        AugmentCombo::Flip,
        AugmentCombo::Offset,
        AugmentCombo::ScaleRotate,
        AugmentCombo::ScaleFlip,
        AugmentCombo::ScaleOffset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentCombo::None => "none",
            AugmentCombo::Scale => "scale",
            AugmentCombo::Rotate => "rotate",
            AugmentCombo::Flip => "flip",
            AugmentCombo::Offset => "offset",
            AugmentCombo::ScaleRotate => "scale+rotate",
            AugmentCombo::ScaleFlip => "scale+flip",
            AugmentCombo::ScaleOffset => "scale+offset",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    fn uses_scale(self) -> bool {
        matches!(
            self,
            AugmentCombo::Scale
                | AugmentCombo::ScaleRotate
                | AugmentCombo::ScaleFlip
                | AugmentCombo::ScaleOffset
        )
    }

    /// `base` with only this combination's augmentations switched on.
    pub fn config(self, base: &AugmentConfig) -> AugmentConfig {
        AugmentConfig {
            num_scale: if self.uses_scale() { base.num_scale } else { 1 },
            num_offset: if matches!(self, AugmentCombo::Offset | AugmentCombo::ScaleOffset) {
                9
            } else {
                1
            },
            enable_rotation: matches!(self, AugmentCombo::Rotate | AugmentCombo::ScaleRotate),
            enable_flip: matches!(self, AugmentCombo::Flip | AugmentCombo::ScaleFlip),
            ..base.clone()
        }
    }
}

/// One view list per augmentation combination, in [`AugmentCombo::ALL`] order.
pub fn ablation_view_sets(
    instance: &DefectInstance,
    base: &AugmentConfig,
) -> Result<Vec<(AugmentCombo, Vec<ViewSpec>)>, GeometryError> {
    AugmentCombo::ALL
        .into_iter()
        .map(|c| Ok((c, generate_views(instance, &c.config(base))?)))
        .collect()
}
