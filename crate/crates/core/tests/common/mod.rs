#![allow(dead_code)]

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use mvrec::dataset::Rect;

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 48;

/// One image of an MVTec-style tree; `rects` are painted into its mask.
pub struct FixtureImage<'a> {
    pub category: &'a str,
    pub defect_type: &'a str,
    pub stem: &'a str,
    pub rects: Vec<Rect>,
}

pub fn write_mvtec(root: &Path, images: &[FixtureImage<'_>]) {
    for im in images {
        let test_dir = root.join(im.category).join("test").join(im.defect_type);
        std::fs::create_dir_all(&test_dir).unwrap();
        let rgb = RgbImage::from_fn(WIDTH, HEIGHT, |x, y| Rgb([(x * 4) as u8, (y * 5) as u8, 128]));
        rgb.save(test_dir.join(format!("{}.png", im.stem))).unwrap();
        if im.defect_type == "good" {
            continue;
        }
        let gt_dir = root.join(im.category).join("ground_truth").join(im.defect_type);
        std::fs::create_dir_all(&gt_dir).unwrap();
        let mut mask = GrayImage::new(WIDTH, HEIGHT);
        for r in &im.rects {
            for y in r.y..r.bottom() {
                for x in r.x..r.right() {
                    mask.put_pixel(x, y, Luma([255]));
                }
            }
        }
        mask.save(gt_dir.join(format!("{}_mask.png", im.stem))).unwrap();
    }
}

/// Three defect images: two components in the first, one in each of the others.
pub fn three_image_fixture(root: &Path) {
    write_mvtec(
        root,
        &[
            FixtureImage {
                category: "bottle",
                defect_type: "broken",
                stem: "000",
                rects: vec![Rect::new(2, 3, 5, 4), Rect::new(40, 30, 10, 6)],
            },
            FixtureImage {
                category: "bottle",
                defect_type: "contamination",
                stem: "000",
                rects: vec![Rect::new(20, 10, 8, 8)],
            },
            FixtureImage {
                category: "bottle",
                defect_type: "contamination",
                stem: "001",
                rects: vec![Rect::new(60, 44, 4, 4)],
            },
            FixtureImage {
                category: "bottle",
                defect_type: "good",
                stem: "000",
                rects: vec![],
            },
        ],
    );
}
