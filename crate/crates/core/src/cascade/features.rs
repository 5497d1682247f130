//! Haar and LBP features evaluated on integral images.
//!
//! Feature geometry is declared in base-window coordinates. When a window is
//! larger than the base window, every coordinate is scaled per axis with
//! round-half-up integer arithmetic.

use serde::{Deserialize, Serialize};

use super::{CascadeError, Result};
use crate::imaging::{IntegralImage, Rect};

/// Base-window size `(w, h)`.
pub type Window = (u32, u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightedRect {
    pub rect: Rect,
    pub weight: i32,
}

/// Signed sum of 2–3 rectangles whose weighted areas cancel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HaarFeature {
    rects: Vec<WeightedRect>,
    base: Window,
}

impl HaarFeature {
    pub fn new(rects: Vec<WeightedRect>, base: Window) -> Result<Self> {
        if !(2..=3).contains(&rects.len()) {
            return Err(CascadeError::InvalidFeature(format!(
                "haar feature needs 2 or 3 rects, got {}",
                rects.len()
            )));
        }
        let mut balance = 0i64;
        for wr in &rects {
            if wr.rect.area() == 0 {
                return Err(CascadeError::InvalidFeature(format!(
                    "zero-area rect {:?}",
                    wr.rect
                )));
            }
            if wr.rect.right() > base.0 || wr.rect.bottom() > base.1 {
                return Err(CascadeError::InvalidFeature(format!(
                    "rect {:?} outside {}x{} base window",
                    wr.rect, base.0, base.1
                )));
            }
            balance += i64::from(wr.weight) * wr.rect.area() as i64;
        }
        if balance != 0 {
            return Err(CascadeError::InvalidFeature(format!(
                "weighted area sums to {balance}, expected 0"
            )));
        }
        Ok(HaarFeature { rects, base })
    }

    pub fn rects(&self) -> &[WeightedRect] {
        &self.rects
    }

    pub fn base(&self) -> Window {
        self.base
    }
}

/// 3×3 grid of equal cells; `cell` is the top-left cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LbpFeature {
    cell: Rect,
    base: Window,
}

impl LbpFeature {
    pub fn new(cell: Rect, base: Window) -> Result<Self> {
        if cell.w == 0 || cell.h == 0 {
            return Err(CascadeError::InvalidFeature(format!("zero-area lbp cell {cell:?}")));
        }
        if cell.x + 3 * cell.w > base.0 || cell.y + 3 * cell.h > base.1 {
            return Err(CascadeError::InvalidFeature(format!(
                "lbp grid from {cell:?} exceeds {}x{} base window",
                base.0, base.1
            )));
        }
        Ok(LbpFeature { cell, base })
    }

    pub fn cell(&self) -> Rect {
        self.cell
    }

    pub fn base(&self) -> Window {
        self.base
    }
}

/// Maps base-window coordinates into an image window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Scaler {
    origin: (u64, u64),
    num: (u64, u64),
    den: (u64, u64),
}

impl Scaler {
    pub(crate) fn new(base: Window, window: &Rect) -> Self {
        Scaler {
            origin: (u64::from(window.x), u64::from(window.y)),
            num: (u64::from(window.w), u64::from(window.h)),
            den: (u64::from(base.0), u64::from(base.1)),
        }
    }

    #[inline]
    fn x(&self, v: u32) -> u32 {
        (self.origin.0 + (2 * u64::from(v) * self.num.0 + self.den.0) / (2 * self.den.0)) as u32
    }

    #[inline]
    fn y(&self, v: u32) -> u32 {
        (self.origin.1 + (2 * u64::from(v) * self.num.1 + self.den.1) / (2 * self.den.1)) as u32
    }

    #[inline]
    fn rect(&self, r: &Rect) -> (u32, u32, u32, u32) {
        let (x0, y0) = (self.x(r.x), self.y(r.y));
        let (x1, y1) = (self.x(r.right()), self.y(r.bottom()));
        (x0, y0, x1 - x0, y1 - y0)
    }
}

pub(crate) fn check_window(ii: &IntegralImage, base: Window, window: &Rect) -> Result<()> {
    if !window.fits(ii.width(), ii.height()) {
        return Err(CascadeError::Bounds(crate::imaging::ImagingError::OutOfBounds {
            rect: *window,
            width: ii.width(),
            height: ii.height(),
        }));
    }
    if window.w < base.0 || window.h < base.1 {
        return Err(CascadeError::InvalidWindow(format!(
            "window {window:?} smaller than {}x{} base",
            base.0, base.1
        )));
    }
    Ok(())
}

/// Haar response normalized by window area.
///
/// Each rect contributes its mean intensity times its base-window area, so the
/// zero weighted-area balance survives rounding at any scale. The sum is kept
/// as an exact rational over 128-bit integers; adding a constant to every
/// pixel therefore leaves the returned value bit-identical.
pub fn eval_haar(ii: &IntegralImage, f: &HaarFeature, window: &Rect) -> Result<f64> {
    check_window(ii, f.base, window)?;
    Ok(eval_haar_unchecked(ii, f, &Scaler::new(f.base, window)))
}

#[inline]
pub(crate) fn eval_haar_unchecked(ii: &IntegralImage, f: &HaarFeature, s: &Scaler) -> f64 {
    let mut sums = [0i128; 3];
    let mut areas = [1i128; 3];
    let n = f.rects.len();
    for (k, wr) in f.rects.iter().enumerate() {
        let (x, y, w, h) = s.rect(&wr.rect);
        sums[k] = i128::from(ii.sum_unchecked(x, y, w, h));
        areas[k] = i128::from(w) * i128::from(h);
    }
    let mut num = 0i128;
    for k in 0..n {
        let wr = &f.rects[k];
        let mut term = i128::from(wr.weight) * wr.rect.area() as i128 * sums[k];
        for (j, &a) in areas.iter().enumerate().take(n) {
            if j != k {
                term *= a;
            }
        }
        num += term;
    }
    let den: i128 = areas[..n].iter().product();
    let base_area = f64::from(f.base.0) * f64::from(f.base.1);
    num as f64 / den as f64 / base_area
}

/// Neighbor order: clockwise from the top-left cell. The first neighbor is
/// the most significant bit.
const LBP_NEIGHBORS: [(usize, usize); 8] =
    [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// 8-bit LBP code over the scaled 3×3 cell grid; bit set iff the neighbor
/// cell's mean is ≥ the center cell's mean.
pub fn eval_lbp(ii: &IntegralImage, f: &LbpFeature, window: &Rect) -> Result<u8> {
    check_window(ii, f.base, window)?;
    Ok(eval_lbp_unchecked(ii, f, &Scaler::new(f.base, window)))
}

#[inline]
pub(crate) fn eval_lbp_unchecked(ii: &IntegralImage, f: &LbpFeature, s: &Scaler) -> u8 {
    let c = f.cell;
    let mut gx = [0u32; 4];
    let mut gy = [0u32; 4];
    for i in 0..4u32 {
        gx[i as usize] = s.x(c.x + i * c.w);
        gy[i as usize] = s.y(c.y + i * c.h);
    }
    let cell = |i: usize, j: usize| -> (u64, u64) {
        let (w, h) = (gx[i + 1] - gx[i], gy[j + 1] - gy[j]);
        (
            u64::from(ii.sum_unchecked(gx[i], gy[j], w, h)),
            u64::from(w) * u64::from(h),
        )
    };
    let (cs, ca) = cell(1, 1);
    let mut code = 0u8;
    for &(i, j) in &LBP_NEIGHBORS {
        let (ns, na) = cell(i, j);
        code = (code << 1) | u8::from(ns * ca >= cs * na);
    }
    code
}

/// Every 2- and 3-rect upright Haar feature inside `base`, positions and
/// sizes sampled on a `step` grid.
pub fn haar_pool(base: Window, step: u32) -> Vec<HaarFeature> {
    let step = step.max(1);
    let (bw, bh) = base;
    let mut out = Vec::new();
    let mut push = |rects: Vec<(u32, u32, u32, u32, i32)>| {
        let rects = rects
            .into_iter()
            .map(|(x, y, w, h, weight)| WeightedRect { rect: Rect::new(x, y, w, h), weight })
            .collect();
        out.push(HaarFeature::new(rects, base).expect("generated feature is valid"));
    };
    for h in (1..=bh).step_by(step as usize) {
        for w in (1..=bw).step_by(step as usize) {
            for y in (0..=bh - h).step_by(step as usize) {
                for x in (0..=bw - w).step_by(step as usize) {
                    // two halves, left/right then top/bottom
                    if w % 2 == 0 {
                        let hw = w / 2;
                        push(vec![(x, y, hw, h, 1), (x + hw, y, hw, h, -1)]);
                    }
                    if h % 2 == 0 {
                        let hh = h / 2;
                        push(vec![(x, y, w, hh, 1), (x, y + hh, w, hh, -1)]);
                    }
                    // three bands, outer bands against the middle one
                    if w % 3 == 0 {
                        let tw = w / 3;
                        push(vec![(x, y, tw, h, 1), (x + tw, y, tw, h, -2), (x + 2 * tw, y, tw, h, 1)]);
                    }
                    if h % 3 == 0 {
                        let th = h / 3;
                        push(vec![(x, y, w, th, 1), (x, y + th, w, th, -2), (x, y + 2 * th, w, th, 1)]);
                    }
                }
            }
        }
    }
    out
}

/// Every LBP grid inside `base`, cell origins sampled on a `step` grid.
pub fn lbp_pool(base: Window, step: u32) -> Vec<LbpFeature> {
    let step = step.max(1) as usize;
    let (bw, bh) = base;
    let mut out = Vec::new();
    for ch in 1..=bh / 3 {
        for cw in 1..=bw / 3 {
            for y in (0..=bh - 3 * ch).step_by(step) {
                for x in (0..=bw - 3 * cw).step_by(step) {
                    out.push(LbpFeature { cell: Rect::new(x, y, cw, ch), base });
                }
            }
        }
    }
    out
}
