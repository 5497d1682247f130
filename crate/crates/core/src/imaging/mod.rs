//! Raster primitives: grayscale conversion, cropping, resizing, Otsu
//! binarization and summed-area tables.

mod pgm;

pub use pgm::{read_pgm, read_pgm_file, write_pgm, write_pgm_file};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("malformed raster: {0}")]
    Malformed(String),
    #[error("rect {rect:?} exceeds {width}x{height} image")]
    OutOfBounds { rect: Rect, width: usize, height: usize },
    #[error("invalid target size {0}x{1}")]
    ZeroSize(usize, usize),
    #[error("histogram has a single intensity ({0}); no threshold separates it")]
    DegenerateHistogram(u8),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    /// Center in pixel coordinates (may be fractional).
    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.right() as usize <= width && self.bottom() as usize <= height
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            u64::from(x1 - x0) * u64::from(y1 - y0)
        }
    }

    /// Intersection over union; 0 when both rects are empty.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Single-channel 8-bit raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::Malformed(format!(
                "empty raster {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImagingError::Malformed(format!(
                "{width}x{height} raster needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width as u32, self.height as u32)
    }

    pub fn check_rect(&self, r: &Rect) -> Result<()> {
        if r.fits(self.width, self.height) {
            Ok(())
        } else {
            Err(ImagingError::OutOfBounds {
                rect: *r,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Mirror left to right.
    pub fn flip_horizontal(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            data.extend(self.row(y).iter().rev());
        }
        GrayImage { width: self.width, height: self.height, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

/// Raster whose every element is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::Malformed(format!(
                "binary raster {width}x{height} with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(ImagingError::Malformed(format!("binary raster holds value {v}")));
        }
        Ok(BinaryImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Expand to a 0/255 gray raster.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v)).collect()
    }
}

/// Summed-area table with a zero top row and left column.
///
/// `at(x, y)` is the sum of all source pixels with column `< x` and row `< y`.
/// 32-bit accumulators cover any 8-bit image up to 4096×4096.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

pub const MAX_INTEGRAL_PIXELS: usize = 4096 * 4096;

impl IntegralImage {
    /// Width of the source image (the table is one wider).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u32 {
        self.data[y * (self.width + 1) + x]
    }

    /// Sum over `r` without bounds checks beyond slice indexing.
    #[inline]
    pub fn sum_unchecked(&self, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let stride = self.width + 1;
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        let a = self.data[y0 * stride + x0];
        let b = self.data[y0 * stride + x1];
        let c = self.data[y1 * stride + x0];
        let d = self.data[y1 * stride + x1];
        d.wrapping_sub(b).wrapping_sub(c).wrapping_add(a)
    }
}

/// BT.601 luma, rounded half up. `rgb` is interleaved 8-bit RGB.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(ImagingError::Malformed(format!("empty raster {width}x{height}")));
    }
    if rgb.len() != width * height * 3 {
        return Err(ImagingError::Malformed(format!(
            "{width}x{height} RGB raster needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let data = rgb
        .chunks_exact(3)
        .map(|p| {
            let weighted =
                299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage::new(width, height, data)
}

pub fn integral(img: &GrayImage) -> IntegralImage {
    let (w, h) = (img.width, img.height);
    assert!(w * h <= MAX_INTEGRAL_PIXELS, "integral image limited to 4096x4096 pixels");
    let stride = w + 1;
    let mut data = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u32;
        let src = img.row(y);
        for x in 0..w {
            row_sum += u32::from(src[x]);
            data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row_sum;
        }
    }
    IntegralImage { width: w, height: h, data }
}

pub fn rect_sum(ii: &IntegralImage, r: &Rect) -> Result<u32> {
    if !r.fits(ii.width, ii.height) {
        return Err(ImagingError::OutOfBounds { rect: *r, width: ii.width, height: ii.height });
    }
    Ok(ii.sum_unchecked(r.x, r.y, r.w, r.h))
}

pub fn crop(img: &GrayImage, r: &Rect) -> Result<GrayImage> {
    img.check_rect(r)?;
    if r.w == 0 || r.h == 0 {
        return Err(ImagingError::ZeroSize(r.w as usize, r.h as usize));
    }
    let mut data = Vec::with_capacity(r.area() as usize);
    for y in r.y..r.bottom() {
        let row = img.row(y as usize);
        data.extend_from_slice(&row[r.x as usize..r.right() as usize]);
    }
    GrayImage::new(r.w as usize, r.h as usize, data)
}

/// Bilinear resampling with pixel centers aligned and edges clamped.
///
/// Source coordinates and weights are exact rationals, and the result is
/// rounded half up, so output does not depend on floating-point order.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::ZeroSize(out_w, out_h));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    // source coordinate of output pixel o is ((2o+1)·in − out) / (2·out)
    let taps = |out: usize, inp: usize| -> (Vec<(usize, usize, u64)>, u64) {
        let den = 2 * out as u64;
        let max = (inp as u64 - 1) * den;
        let v = (0..out)
            .map(|o| {
                let num = ((2 * o as i64 + 1) * inp as i64 - out as i64).max(0) as u64;
                let num = num.min(max);
                let i0 = (num / den) as usize;
                (i0, (i0 + 1).min(inp - 1), num % den)
            })
            .collect();
        (v, den)
    };
    let (xs, dx) = taps(out_w, img.width);
    let (ys, dy) = taps(out_h, img.height);
    let total = dx * dy;
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let r0 = img.row(y0);
        let r1 = img.row(y1);
        for &(x0, x1, fx) in &xs {
            let top = (dx - fx) * u64::from(r0[x0]) + fx * u64::from(r0[x1]);
            let bot = (dx - fx) * u64::from(r1[x0]) + fx * u64::from(r1[x1]);
            let v = (dy - fy) * top + fy * bot;
            data.push(((2 * v + total) / (2 * total)) as u8);
        }
    }
    GrayImage::new(out_w, out_h, data)
}

/// Otsu's global threshold. Pixels strictly above the threshold map to 1.
///
/// Ties in between-class variance resolve to the lowest threshold. A
/// histogram with a single occupied bin has no separating threshold and is
/// reported as [`ImagingError::DegenerateHistogram`].
pub fn binarize_otsu(img: &GrayImage) -> Result<(BinaryImage, u8)> {
    let t = otsu_threshold(img)?;
    let data = img.data.iter().map(|&v| u8::from(v > t)).collect();
    Ok((BinaryImage { width: img.width, height: img.height, data }, t))
}

pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    let n = img.data.len() as u64;
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut best: Option<(u8, f64)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..255usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // n²·σ_b² = (n·s0 − n0·total)² / (n0·n1); integer numerator keeps ties exact.
        let d = (n as i128) * (s0 as i128) - (n0 as i128) * (total as i128);
        let score = (d as f64) * (d as f64) / ((n0 as f64) * (n1 as f64));
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t as u8, score));
        }
    }
    best.map(|(t, _)| t)
        .ok_or(ImagingError::DegenerateHistogram(img.data[0]))
}
