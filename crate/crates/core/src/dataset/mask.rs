use image::{GrayImage, Luma};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DatasetError;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x as f64 && x <= self.right() as f64 && y >= self.y as f64 && y <= self.bottom() as f64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

/// Dense binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask { width, height, bits }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(Mask { width, height, bits })
    }

    /// Any non-zero pixel is set.
    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Mask {
            width: w,
            height: h,
            bits: img.pixels().map(|p| p.0[0] != 0).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn fill_rect(&mut self, r: Rect) {
        for y in r.y..r.bottom().min(self.height) {
            for x in r.x..r.right().min(self.width) {
                self.set(x, y, true);
            }
        }
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    /// Tight bounds of the set pixels.
    pub fn bbox(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Mean of set pixel centres, `(x + 0.5, y + 0.5)` convention.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                current = b;
                run = 0;
            }
            run += 1;
        }
        counts.push(run);
        RleMask {
            width: self.width,
            height: self.height,
            counts,
        }
    }
}

/// Run-length encoded binary mask.
///
/// Row-major runs alternate zeros/ones and always start with a zero run
/// (possibly of length 0). Only the first run may be empty, and the runs sum
/// to `width * height`. Serialized counts are decimal ASCII separated by
/// single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    #[serde(serialize_with = "ser_counts", deserialize_with = "de_counts")]
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn decode(&self) -> Result<Mask, DatasetError> {
        self.validate()?;
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &run) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// Set-pixel spans `[start, end)` in row-major pixel index space.
    fn one_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    /// Tight bounds computed from the runs without decoding.
    pub fn bbox(&self) -> Option<Rect> {
        let w = self.width as u64;
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        for (s, e) in self.one_runs() {
            let (r0, r1) = (s / w, (e - 1) / w);
            if r0 == r1 {
                x0 = x0.min(s % w);
                x1 = x1.max((e - 1) % w);
            } else {
                x0 = 0;
                x1 = w - 1;
            }
            y0 = y0.min(r0);
            y1 = y1.max(r1);
        }
        (y0 != u64::MAX).then(|| {
            Rect::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32)
        })
    }

    /// Same convention as [`Mask::centroid`].
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let w = self.width as u64;
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (s, e) in self.one_runs() {
            for p in s..e {
                sx += (p % w) as f64 + 0.5;
                sy += (p / w) as f64 + 0.5;
            }
            n += e - s;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.width as u64 * self.height as u64;
        if total != expected {
            return Err(DatasetError::Format(format!(
                "RLE runs sum to {total}, expected {expected}"
            )));
        }
        if self.counts.iter().skip(1).any(|&c| c == 0) {
            return Err(DatasetError::Format("RLE has an empty run after the first".into()));
        }
        Ok(())
    }

    pub fn counts_string(&self) -> String {
        let parts: Vec<String> = self.counts.iter().map(u32::to_string).collect();
        parts.join(" ")
    }

    pub fn parse_counts(s: &str) -> Result<Vec<u32>, DatasetError> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(' ')
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| DatasetError::Format(format!("bad RLE count {t:?}")))
            })
            .collect()
    }
}

fn ser_counts<S: Serializer>(counts: &[u32], s: S) -> Result<S::Ok, S::Error> {
    let parts: Vec<String> = counts.iter().map(u32::to_string).collect();
    s.serialize_str(&parts.join(" "))
}

fn de_counts<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
    let s = String::deserialize(d)?;
    RleMask::parse_counts(&s).map_err(serde::de::Error::custom)
}
