//! Multi-scale sliding-window scanning and detection grouping.

use serde::{Deserialize, Serialize};

use super::{eval_cascade_unchecked, CascadeModel};
use crate::imaging::{integral, GrayImage, IntegralImage, Rect};
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanParams {
    pub scale_factor: f64,
    /// Step as a fraction of the current window width (at least 1 px).
    pub step_fraction: f64,
    pub min_neighbors: usize,
    pub iou_thresh: f64,
    /// Smallest window width scanned; the base window width when unset.
    pub min_width: Option<u32>,
    pub max_width: Option<u32>,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            scale_factor: 1.2,
            step_fraction: 0.05,
            min_neighbors: 3,
            iou_thresh: 0.3,
            min_width: None,
            max_width: None,
        }
    }
}

impl ScanParams {
    pub fn step_for(&self, width: u32) -> u32 {
        ((self.step_fraction * f64::from(width)).round() as u32).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub score: f64,
    pub neighbors: usize,
}

/// Raw scanner output before grouping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanResult {
    pub windows_scanned: usize,
    /// Accepted windows with their final-stage score, in scan order.
    pub accepted: Vec<(Rect, f64)>,
}

/// Window sizes visited inside a `roi_w`×`roi_h` region, smallest first.
pub fn scan_windows(base: (u32, u32), roi_w: u32, roi_h: u32, scan: &ScanParams) -> Vec<(u32, u32)> {
    let mut sizes: Vec<(u32, u32)> = Vec::new();
    let min_w = scan.min_width.unwrap_or(base.0).max(base.0);
    let max_w = scan.max_width.unwrap_or(u32::MAX);
    let factor = scan.scale_factor.max(1.0 + 1e-6);
    let mut s = 1.0f64;
    loop {
        let w = (f64::from(base.0) * s).round() as u32;
        let h = (f64::from(base.1) * s).round() as u32;
        if w > roi_w || h > roi_h || w > max_w {
            break;
        }
        if w >= min_w && sizes.last() != Some(&(w, h)) {
            sizes.push((w, h));
        }
        s *= factor;
    }
    sizes
}

/// Runs the cascade over every window of every scale inside `roi`.
pub fn scan(ii: &IntegralImage, model: &CascadeModel, roi: &Rect, scan: &ScanParams, exec: Exec) -> ScanResult {
    let roi = clip(roi, ii.width() as u32, ii.height() as u32);
    let mut rows: Vec<(u32, u32, u32, u32)> = Vec::new();
    for (w, h) in scan_windows(model.base_window(), roi.w, roi.h, scan) {
        let step = scan.step_for(w);
        let mut y = roi.y;
        while y + h <= roi.bottom() {
            rows.push((w, h, y, step));
            y += step;
        }
    }
    let per_row = par::map(exec, &rows, |&(w, h, y, step)| {
        let mut hits = Vec::new();
        let mut n = 0usize;
        let mut x = roi.x;
        while x + w <= roi.right() {
            let win = Rect::new(x, y, w, h);
            let o = eval_cascade_unchecked(ii, model, &win);
            if o.accepted {
                hits.push((win, o.score));
            }
            n += 1;
            x += step;
        }
        (n, hits)
    });
    let mut out = ScanResult::default();
    for (n, hits) in per_row {
        out.windows_scanned += n;
        out.accepted.extend(hits);
    }
    out
}

fn clip(r: &Rect, w: u32, h: u32) -> Rect {
    let x = r.x.min(w);
    let y = r.y.min(h);
    Rect::new(x, y, r.w.min(w - x), r.h.min(h - y))
}

/// Scans the whole image and groups the accepted windows.
///
/// Images smaller than the base window yield no detections.
pub fn detect(img: &GrayImage, model: &CascadeModel, params: &ScanParams) -> Vec<Detection> {
    detect_in(&integral(img), model, &img.bounds(), params, Exec::default())
}

pub fn detect_in(ii: &IntegralImage, model: &CascadeModel, roi: &Rect, params: &ScanParams, exec: Exec) -> Vec<Detection> {
    let raw = scan(ii, model, roi, params, exec);
    group_scored(&raw.accepted, params.min_neighbors, params.iou_thresh)
}

/// Clusters boxes whose IoU chains reach `iou_thresh` and replaces each
/// cluster by its rounded mean box.
///
/// Clusters whose mean boxes still overlap at `iou_thresh` are merged
/// until none do, so the output boxes pairwise overlap below the threshold
/// and regrouping them with `min_neighbors = 1` is a no-op. Clusters
/// smaller than `min_neighbors` are dropped.
pub fn group_detections(raw: &[Rect], min_neighbors: usize, iou_thresh: f64) -> Vec<Detection> {
    let scored: Vec<(Rect, f64)> = raw.iter().map(|&r| (r, 0.0)).collect();
    group_scored(&scored, min_neighbors, iou_thresh)
}

/// As [`group_detections`]; each detection's score is its best member score.
pub fn group_scored(raw: &[(Rect, f64)], min_neighbors: usize, iou_thresh: f64) -> Vec<Detection> {
    let n = raw.len();
    let mut dsu = Dsu::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if raw[i].0.iou(&raw[j].0) >= iou_thresh {
                dsu.union(i, j);
            }
        }
    }
    loop {
        let clusters = dsu.clusters();
        let means: Vec<Rect> = clusters
            .iter()
            .map(|c| mean_box(c.iter().map(|&i| &raw[i].0)))
            .collect();
        let mut merged = false;
        for a in 0..means.len() {
            for b in a + 1..means.len() {
                if means[a].iou(&means[b]) >= iou_thresh {
                    dsu.union(clusters[a][0], clusters[b][0]);
                    merged = true;
                }
            }
        }
        if !merged {
            let mut out: Vec<Detection> = clusters
                .iter()
                .zip(means)
                .filter(|(c, _)| c.len() >= min_neighbors.max(1))
                .map(|(c, bbox)| Detection {
                    bbox,
                    score: c.iter().map(|&i| raw[i].1).fold(f64::NEG_INFINITY, f64::max),
                    neighbors: c.len(),
                })
                .collect();
            sort_detections(&mut out);
            return out;
        }
    }
}

pub(crate) fn sort_detections(d: &mut [Detection]) {
    d.sort_by(|a, b| {
        b.neighbors
            .cmp(&a.neighbors)
            .then(b.score.total_cmp(&a.score))
            .then((a.bbox.y, a.bbox.x, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, b.bbox.w, b.bbox.h)))
    });
}

/// Component-wise mean, rounded half up.
pub(crate) fn mean_box<'a>(rects: impl Iterator<Item = &'a Rect>) -> Rect {
    let (mut n, mut s) = (0u64, [0u64; 4]);
    for r in rects {
        n += 1;
        s[0] += u64::from(r.x);
        s[1] += u64::from(r.y);
        s[2] += u64::from(r.w);
        s[3] += u64::from(r.h);
    }
    let avg = |v: u64| ((2 * v + n) / (2 * n)) as u32;
    Rect::new(avg(s[0]), avg(s[1]), avg(s[2]), avg(s[3]))
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root, keeping cluster order stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Member lists ordered by smallest member index.
    fn clusters(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        by_root.into_iter().filter(|c| !c.is_empty()).collect()
    }
}
