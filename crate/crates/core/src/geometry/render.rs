use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Pixel, RgbImage};

use super::{Flip, GeometryError, MaskMode, Rotation, ViewSpec};
use crate::dataset::Mask;

/// An encoder-ready patch and its optional alpha channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub patch: RgbImage,
    pub alpha: Option<GrayImage>,
}

/// Rotation (clockwise) first, then flip.
pub fn apply_transform<P: Pixel + 'static>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    rotation: Rotation,
    flip: Flip,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let rotated = match rotation {
        Rotation::R0 => img.clone(),
        Rotation::R90 => imageops::rotate90(img),
        Rotation::R180 => imageops::rotate180(img),
        Rotation::R270 => imageops::rotate270(img),
    };
    match flip {
        Flip::None => rotated,
        Flip::Horizontal => imageops::flip_horizontal(&rotated),
    }
}

/// Undoes [`apply_transform`].
pub fn invert_transform<P: Pixel + 'static>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    rotation: Rotation,
    flip: Flip,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let unflipped = match flip {
        Flip::None => img.clone(),
        Flip::Horizontal => imageops::flip_horizontal(img),
    };
    apply_transform(&unflipped, rotation.inverse(), Flip::None)
}

/// Crops, resizes to `out_side` (bilinear for pixels, nearest for the mask),
/// then rotates and flips. `mask` must share the image's dimensions.
pub fn render_view(
    image: &RgbImage,
    mask: &Mask,
    spec: &ViewSpec,
    out_side: u32,
) -> Result<RenderedView, GeometryError> {
    let (w, h) = image.dimensions();
    if !spec.crop.fits_within(w, h) || spec.crop.w == 0 || spec.crop.h == 0 {
        return Err(GeometryError::CropOutOfBounds {
            crop: spec.crop,
            width: w,
            height: h,
        });
    }
    if (mask.width(), mask.height()) != (w, h) {
        return Err(GeometryError::InvalidConfig(format!(
            "mask is {}x{}, image is {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    if out_side == 0 {
        return Err(GeometryError::InvalidConfig("output side must be positive".into()));
    }
    let c = spec.crop;
    let crop = imageops::crop_imm(image, c.x, c.y, c.w, c.h).to_image();
    let patch = resize(&crop, out_side, FilterType::Triangle);
    let alpha = match spec.mask_mode {
        MaskMode::None => None,
        MaskMode::FullForeground => Some(GrayImage::from_pixel(out_side, out_side, Luma([255]))),
        MaskMode::Instance => {
            let m = GrayImage::from_fn(c.w, c.h, |x, y| {
                Luma([if mask.get(c.x + x, c.y + y) { 255 } else { 0 }])
            });
            Some(resize(&m, out_side, FilterType::Nearest))
        }
    };
    Ok(RenderedView {
        patch: apply_transform(&patch, spec.rotation, spec.flip),
        alpha: alpha.map(|a| apply_transform(&a, spec.rotation, spec.flip)),
    })
}

fn resize<P: Pixel + 'static>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    side: u32,
    filter: FilterType,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    if img.dimensions() == (side, side) {
        img.clone()
    } else {
        imageops::resize(img, side, side, filter)
    }
}
