//! Seeded synthetic gaze data: eye-pair composites, full scenes with
//! ground-truth boxes, sample corpora and cascades trained on scenes.
//!
//! Labels follow the camera-mirrored convention: for `Right` both pupils sit
//! toward the image left of their eye, for `Left` toward the image right,
//! by a quarter of the eye width. `Vague` pupils sit within a twelfth of the
//! eye width of the center.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    eval_cascade_unchecked, group_scored, haar_pool, scan, lbp_pool, train_cascade, CascadeError, CascadeModel, CascadeTrainConfig,
    FeaturePool, StageTarget, Window,
};
use crate::dataset::{save_manifest_file, DatasetError, Label, Manifest, ManifestEntry, Origin, Sample, INPUT_SIZE};
use crate::imaging::{integral, resize_bilinear, write_pgm_file, GrayImage, ImagingError, IntegralImage, Rect};
use crate::par::{self, Exec};
use crate::preprocess::{eye_region, locate_eyes_in, select_face, EyePair, PipelineConfig, STRIP_HEIGHT};
use crate::seed;

/// Pupil offset for left/right gaze, as a fraction of eye width.
pub const GAZE_OFFSET: f64 = 0.25;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Per-subject appearance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub skin: u8,
    pub sclera: u8,
    pub iris: u8,
    /// Sclera height over width before lid closure.
    pub eye_aspect: f64,
    /// Lid opening in (0.3, 1].
    pub openness: f64,
    /// Additive noise amplitude in gray levels.
    pub noise: f64,
}

impl SubjectStyle {
    pub fn from_seed(s: u64) -> Self {
        let mut rng = seed::rng(s, &[0x57]);
        SubjectStyle {
            skin: rng.gen_range(105..=170),
            sclera: rng.gen_range(195..=240),
            iris: rng.gen_range(25..=80),
            eye_aspect: rng.gen_range(0.42..0.55),
            openness: rng.gen_range(0.65..=1.0),
            noise: rng.gen_range(2.0..8.0),
        }
    }

    pub fn for_subject(base_seed: u64, subject: usize) -> Self {
        SubjectStyle::from_seed(seed::derive(base_seed, &[0x5b, subject as u64]))
    }
}

/// Pupil offset as a fraction of eye width, signed toward image right.
pub fn pupil_offset(label: Label, rng: &mut impl Rng) -> f64 {
    match label {
        Label::Right => -GAZE_OFFSET,
        Label::Left => GAZE_OFFSET,
        Label::Vague => rng.gen_range(-GAZE_OFFSET / 3.0..GAZE_OFFSET / 3.0) * 0.999,
    }
}

/// Drawn eye geometry in image coordinates (pixel `i` spans `[i, i+1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeGeom {
    pub cx: f64,
    pub cy: f64,
    /// Sclera semi-axes.
    pub a: f64,
    pub b: f64,
    pub iris_r: f64,
    pub pupil_r: f64,
    pub pupil_x: f64,
}

impl EyeGeom {
    /// Eye centered in a box, looking `offset` eye-widths to the side.
    fn in_box(cx: f64, cy: f64, bw: f64, bh: f64, style: &SubjectStyle, offset: f64) -> EyeGeom {
        let a = 0.46 * bw;
        let b = (0.46 * bh).min(a * style.eye_aspect) * style.openness;
        let iris_r = 0.2 * bw;
        EyeGeom { cx, cy, a, b, iris_r, pupil_r: 0.45 * iris_r, pupil_x: cx + offset * 2.0 * a }
    }

    fn scaled(&self, sx: f64, sy: f64, dy: f64) -> EyeGeom {
        EyeGeom {
            cx: self.cx * sx,
            cy: self.cy * sy + dy,
            a: self.a * sx,
            b: self.b * sy,
            iris_r: self.iris_r * sx,
            pupil_r: self.pupil_r * sx,
            pupil_x: self.pupil_x * sx,
        }
    }

    pub fn in_sclera(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.a, (y - self.cy) / self.b);
        u * u + v * v <= 1.0
    }

    pub fn in_pupil(&self, x: f64, y: f64) -> bool {
        (x - self.pupil_x).hypot(y - self.cy) <= self.pupil_r
    }

    pub fn in_iris(&self, x: f64, y: f64) -> bool {
        (x - self.pupil_x).hypot(y - self.cy) <= self.iris_r
    }
}

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn new(w: usize, h: usize, v: f32) -> Self {
        Canvas { w, h, data: vec![v; w * h] }
    }

    fn span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
        let lo = lo.floor().max(0.0) as usize;
        let hi = (hi.ceil().max(0.0) as usize).min(n);
        lo.min(hi)..hi
    }

    /// Paints with 2×2 supersampling; `f` returns `None` to keep the
    /// existing value at a subsample.
    fn paint(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, f: impl Fn(f64, f64) -> Option<f32>) {
        for y in Canvas::span(y0, y1, self.h) {
            for x in Canvas::span(x0, x1, self.w) {
                let old = self.data[y * self.w + x];
                let mut acc = 0.0;
                for (dx, dy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    acc += f(x as f64 + dx, y as f64 + dy).unwrap_or(old);
                }
                self.data[y * self.w + x] = acc / 4.0;
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, a: f64, b: f64, v: impl Fn(f64, f64) -> f32) {
        self.paint(cx - a, cy - b, cx + a, cy + b, |x, y| {
            let (u, w) = ((x - cx) / a, (y - cy) / b);
            (u * u + w * w <= 1.0).then(|| v(u, w))
        });
    }

    fn eye(&mut self, g: &EyeGeom, style: &SubjectStyle) {
        let lash = (0.08 * g.a).max(1.0);
        let lash_v = f32::from(style.skin) * 0.4;
        let (iris, pupil, sclera) = (f32::from(style.iris), f32::from(style.iris) * 0.45, f32::from(style.sclera));
        self.paint(g.cx - g.a - lash, g.cy - g.b - lash, g.cx + g.a + lash, g.cy + g.b + 1.0, |x, y| {
            if g.in_sclera(x, y) {
                Some(if g.in_pupil(x, y) {
                    pupil
                } else if g.in_iris(x, y) {
                    iris
                } else {
                    sclera
                })
            } else {
                // thin dark upper lid line
                let (u, v) = ((x - g.cx) / (g.a + lash), (y - g.cy) / (g.b + lash));
                (y < g.cy && u * u + v * v <= 1.0).then_some(lash_v)
            }
        });
    }

    fn noise(&mut self, amp: f64, rng: &mut ChaCha8Rng) {
        for v in &mut self.data {
            *v += (amp * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0)) as f32;
        }
    }

    fn to_gray(&self) -> GrayImage {
        let data = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        GrayImage::new(self.w, self.h, data).expect("canvas dimensions")
    }
}

/// Renders one eye-pair composite and the eye geometry in composite
/// coordinates (top strip first).
///
/// Each eye is drawn at a random low resolution with a slightly misaligned
/// box, the way a detector crop would be, then resized to 72×36.
pub fn gen_eye_pair_with_geometry(label: Label, style: &SubjectStyle, seed: u64) -> ([EyeGeom; 2], GrayImage) {
    let mut rng = seed::rng(seed, &[0xe7e]);
    let offset = pupil_offset(label, &mut rng);
    let mut data = Vec::with_capacity(INPUT_SIZE * INPUT_SIZE);
    let mut geoms = [EyeGeom { cx: 0.0, cy: 0.0, a: 1.0, b: 1.0, iris_r: 0.0, pupil_r: 0.0, pupil_x: 0.0 }; 2];
    for (k, geom) in geoms.iter_mut().enumerate() {
        let bw: f64 = rng.gen_range(30.0..54.0);
        let (cw, ch) = (bw.round() as usize, (bw / 2.0).round() as usize);
        let scale: f64 = rng.gen_range(0.92..1.06);
        let cx = cw as f64 / 2.0 + rng.gen_range(-0.06..0.06) * bw;
        let cy = ch as f64 / 2.0 + rng.gen_range(-0.08..0.08) * bw / 2.0;
        let mut c = Canvas::new(cw, ch, f32::from(style.skin));
        let g = EyeGeom::in_box(cx, cy, bw * scale, bw * scale / 2.0, style, offset);
        c.eye(&g, style);
        c.noise(style.noise, &mut rng);
        let strip = resize_bilinear(&c.to_gray(), INPUT_SIZE, STRIP_HEIGHT).expect("non-empty strip");
        data.extend_from_slice(strip.data());
        *geom = g.scaled(INPUT_SIZE as f64 / cw as f64, STRIP_HEIGHT as f64 / ch as f64, (k * STRIP_HEIGHT) as f64);
    }
    (geoms, GrayImage::new(INPUT_SIZE, INPUT_SIZE, data).expect("72x72"))
}

pub fn gen_eye_pair(label: Label, style: &SubjectStyle, seed: u64) -> GrayImage {
    gen_eye_pair_with_geometry(label, style, seed).1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub face_box: Rect,
    pub eyes: EyePair,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub face_min: u32,
    pub face_max: u32,
    /// Background clutter shapes.
    pub clutter: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { width: 640, height: 480, face_min: 120, face_max: 200, clutter: 30 }
    }
}

/// Eye box of a face box, `side` 0 for the image-left eye.
pub fn eye_box(face: &Rect, side: usize) -> Rect {
    let s = f64::from(face.w);
    let cx = f64::from(face.x) + if side == 0 { 0.3 } else { 0.7 } * s;
    let cy = f64::from(face.y) + 0.38 * s;
    let (w, h) = ((0.26 * s).round(), (0.13 * s).round());
    Rect::new((cx - w / 2.0).round() as u32, (cy - h / 2.0).round() as u32, w as u32, h as u32)
}

/// Full frame with one face, default 640×480.
pub fn gen_scene(style: &SubjectStyle, label: Label, seed: u64) -> (GrayImage, SceneTruth) {
    gen_scene_with(&SceneConfig::default(), style, label, seed).expect("default scene config is valid")
}

pub fn gen_scene_with(cfg: &SceneConfig, style: &SubjectStyle, label: Label, seed: u64) -> Result<(GrayImage, SceneTruth)> {
    if cfg.width < 320 || cfg.height < 240 {
        return Err(SynthError::Param(format!("frame {}x{} is smaller than 320x240", cfg.width, cfg.height)));
    }
    let max_side = cfg.face_max.min(cfg.width as u32).min(cfg.height as u32);
    if cfg.face_min < 24 || cfg.face_min > max_side {
        return Err(SynthError::Param(format!("face size range {}..={} does not fit", cfg.face_min, cfg.face_max)));
    }
    let mut rng = seed::rng(seed, &[0x5ce]);
    let (w, h) = (cfg.width, cfg.height);
    let (g0, gx, gy): (f64, f64, f64) = (rng.gen_range(40.0..200.0), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let mut c = Canvas::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            c.data[y * w + x] = (g0 + gx * (x as f64 - w as f64 / 2.0) + gy * (y as f64 - h as f64 / 2.0)) as f32;
        }
    }
    for _ in 0..cfg.clutter {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let (a, b) = (rng.gen_range(5.0..120.0), rng.gen_range(5.0..120.0));
        let v = rng.gen_range(15.0..240.0) as f32;
        if rng.gen_bool(0.5) {
            c.ellipse(cx, cy, a, b, |_, _| v);
        } else {
            c.paint(cx - a, cy - b, cx + a, cy + b, |_, _| Some(v));
        }
    }

    let side = rng.gen_range(cfg.face_min..=max_side);
    let fx = rng.gen_range(0..=w as u32 - side);
    let fy = rng.gen_range(0..=h as u32 - side);
    let face = Rect::new(fx, fy, side, side);
    let s = f64::from(side);
    let (ocx, ocy) = (f64::from(fx) + s / 2.0, f64::from(fy) + s / 2.0);
    let skin = f64::from(style.skin);
    c.ellipse(ocx, ocy, 0.44 * s, 0.5 * s, |u, v| (skin - 30.0 * (u * u + v * v)) as f32);

    let offset = pupil_offset(label, &mut rng);
    let boxes = [eye_box(&face, 0), eye_box(&face, 1)];
    for side in 0..2 {
        let ecx = f64::from(face.x) + if side == 0 { 0.3 } else { 0.7 } * s;
        let ecy = f64::from(face.y) + 0.38 * s;
        let g = EyeGeom::in_box(ecx, ecy, 0.26 * s, 0.13 * s, style, offset);
        c.eye(&g, style);
    }
    let mouth = (skin * 0.45) as f32;
    c.ellipse(ocx, f64::from(fy) + 0.75 * s, 0.18 * s, 0.03 * s, |_, _| mouth);
    c.noise(style.noise, &mut rng);

    let truth = SceneTruth { face_box: face, eyes: EyePair { right_box: boxes[0], left_box: boxes[1] }, label };
    Ok((c.to_gray(), truth))
}

/// Stream seed of frame `index` of `subject`.
pub fn frame_seed(base: u64, subject: usize, index: usize) -> u64 {
    seed::derive(base, &[0xf4, subject as u64, index as u64])
}

pub fn subject_id(subject: usize) -> String {
    format!("s{subject:02}")
}

/// `n` labeled samples over `n_subjects` subjects: sample `i` belongs to
/// subject `i mod n_subjects` and has label `(i / n_subjects) mod 3`.
pub fn gen_corpus(n: usize, n_subjects: usize, base_seed: u64, exec: Exec) -> Result<Vec<Sample>> {
    if n_subjects == 0 {
        return Err(SynthError::Param("need at least one subject".into()));
    }
    let styles: Vec<SubjectStyle> = (0..n_subjects).map(|s| SubjectStyle::for_subject(base_seed, s)).collect();
    par::map_range(exec, n, |i| {
        let subject = i % n_subjects;
        let label = Label::ALL[(i / n_subjects) % 3];
        let g = gen_eye_pair(label, &styles[subject], frame_seed(base_seed, subject, i));
        Sample::from_gray(g, Some(label), Some(subject_id(subject)), format!("c{i:05}")).map_err(SynthError::from)
    })
    .into_iter()
    .collect()
}

/// Writes `n_subjects × 3 × per_label` composites as PGM plus
/// `manifest.jsonl` into `out_dir`.
pub fn gen_dataset(n_subjects: usize, per_label: usize, base_seed: u64, out_dir: &Path, exec: Exec) -> Result<Manifest> {
    if n_subjects == 0 || per_label == 0 {
        return Err(SynthError::Param("subject and frame counts must be at least 1".into()));
    }
    let jobs: Vec<(usize, Label, usize)> = (0..n_subjects)
        .flat_map(|s| Label::ALL.into_iter().flat_map(move |l| (0..per_label).map(move |k| (s, l, k))))
        .collect();
    for s in 0..n_subjects {
        std::fs::create_dir_all(out_dir.join(subject_id(s)))?;
    }
    let entries: Vec<Result<ManifestEntry>> = par::map(exec, &jobs, |&(s, label, k)| {
        let style = SubjectStyle::for_subject(base_seed, s);
        let index = label.index() * per_label + k;
        let tag = frame_seed(base_seed, s, index);
        let path = format!("{}/{}_{k:03}.pgm", subject_id(s), label.name());
        write_pgm_file(&gen_eye_pair(label, &style, tag), out_dir.join(&path))?;
        Ok(ManifestEntry { path, label, subject: subject_id(s), origin: Origin::Original, seed_tag: tag })
    });
    let m = Manifest::new(entries.into_iter().collect::<Result<_>>()?)?;
    save_manifest_file(&m, out_dir.join("manifest.jsonl"))?;
    Ok(m)
}

pub const FACE_BASE: Window = (24, 24);
pub const EYE_BASE: Window = (24, 12);

/// Box-filter downsampling of `r` to `w`×`h`, matching how scaled features
/// average over their rectangles.
pub fn downsample_area(ii: &IntegralImage, r: &Rect, w: u32, h: u32) -> GrayImage {
    GrayImage::from_fn(w as usize, h as usize, |x, y| {
        let (x, y) = (x as u64, y as u64);
        let x0 = r.x + (x * u64::from(r.w) / u64::from(w)) as u32;
        let x1 = r.x + ((x + 1) * u64::from(r.w) / u64::from(w)) as u32;
        let y0 = r.y + (y * u64::from(r.h) / u64::from(h)) as u32;
        let y1 = r.y + ((y + 1) * u64::from(r.h) / u64::from(h)) as u32;
        let (cw, ch) = ((x1 - x0).max(1), (y1 - y0).max(1));
        let s = u64::from(ii.sum_unchecked(x0, y0, cw, ch));
        let a = u64::from(cw) * u64::from(ch);
        ((2 * s + a) / (2 * a)) as u8
    })
    .expect("non-empty target")
}

/// Which detector a [`CascadeRecipe`] trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// LBP face detector over whole frames.
    Face,
    /// Haar eye detector inside the face box.
    Eye,
}

#[derive(Clone, Debug)]
pub struct CascadeRecipe {
    pub target: Target,
    pub scenes: usize,
    /// Extra jittered crops per ground-truth box.
    pub jitter_copies: usize,
    pub pool_step: u32,
    pub train: CascadeTrainConfig,
    /// Mining gives up after this many windows per requested negative.
    pub attempts_per_negative: usize,
    pub seed: u64,
}

impl CascadeRecipe {
    pub fn face(seed: u64) -> Self {
        CascadeRecipe {
            target: Target::Face,
            scenes: 400,
            jitter_copies: 3,
            pool_step: 2,
            train: CascadeTrainConfig {
                max_stages: 14,
                stage: StageTarget { min_tpr: 0.995, max_fpr: 0.5, max_weak: 60 },
                negatives_per_stage: 1500,
                min_negatives: 50,
            },
            attempts_per_negative: 4000,
            seed,
        }
    }

    pub fn eye(seed: u64) -> Self {
        CascadeRecipe {
            target: Target::Eye,
            scenes: 300,
            jitter_copies: 2,
            pool_step: 2,
            train: CascadeTrainConfig {
                max_stages: 10,
                stage: StageTarget { min_tpr: 0.995, max_fpr: 0.5, max_weak: 60 },
                negatives_per_stage: 1500,
                min_negatives: 50,
            },
            attempts_per_negative: 4000,
            seed,
        }
    }

    pub fn base(&self) -> Window {
        match self.target {
            Target::Face => FACE_BASE,
            Target::Eye => EYE_BASE,
        }
    }

    pub fn pool(&self) -> FeaturePool {
        match self.target {
            Target::Face => FeaturePool::Lbp(lbp_pool(FACE_BASE, self.pool_step)),
            Target::Eye => FeaturePool::Haar(haar_pool(EYE_BASE, self.pool_step)),
        }
    }
}

/// Scene `i` of a training or evaluation set drawn from `seed`, each with
/// its own random subject style and label.
pub fn scene_set_item(seed: u64, i: usize) -> (GrayImage, SceneTruth) {
    let s = seed::derive(seed, &[0x5e7, i as u64]);
    let style = SubjectStyle::from_seed(s);
    gen_scene(&style, Label::ALL[i % 3], s)
}

fn jittered(r: &Rect, rng: &mut ChaCha8Rng, shift: f64, scale: f64, bounds: &Rect) -> Option<Rect> {
    let k = rng.gen_range(1.0 - scale..1.0 + scale);
    let (w, h) = ((f64::from(r.w) * k).round(), (f64::from(r.h) * k).round());
    let cx = f64::from(r.x) + f64::from(r.w) / 2.0 + rng.gen_range(-shift..shift) * f64::from(r.w);
    let cy = f64::from(r.y) + f64::from(r.h) / 2.0 + rng.gen_range(-shift..shift) * f64::from(r.h);
    let (x, y) = ((cx - w / 2.0).round(), (cy - h / 2.0).round());
    if x < 0.0 || y < 0.0 || w < 1.0 || h < 1.0 {
        return None;
    }
    let out = Rect::new(x as u32, y as u32, w as u32, h as u32);
    bounds.contains(&out).then_some(out)
}

struct Source {
    ii: IntegralImage,
    truth: SceneTruth,
    bounds: Rect,
}

fn random_window(src: &Source, target: Target, base: Window, rng: &mut ChaCha8Rng) -> Option<Rect> {
    let face = src.truth.face_box;
    let (ww, wh) = match target {
        Target::Face => {
            let w = if rng.gen_bool(0.4) {
                f64::from(face.w) * rng.gen_range(0.5..1.8)
            } else {
                rng.gen_range(f64::from(base.0).max(80.0)..f64::from(src.bounds.h))
            };
            (w, w)
        }
        Target::Eye => {
            let w = f64::from(face.w) * rng.gen_range(0.15..0.45);
            (w, w * f64::from(base.1) / f64::from(base.0))
        }
    };
    let (ww, wh) = (ww.round().max(f64::from(base.0)) as u32, wh.round().max(f64::from(base.1)) as u32);
    let area = match target {
        Target::Face if rng.gen_bool(0.4) => face,
        Target::Face => src.bounds,
        Target::Eye if rng.gen_bool(0.7) => eye_region(&face),
        Target::Eye if rng.gen_bool(0.7) => face,
        Target::Eye => src.bounds,
    };
    // window origin anywhere it overlaps the area, kept inside the frame
    let x_lo = area.x.saturating_sub(ww / 2);
    let y_lo = area.y.saturating_sub(wh / 2);
    let x_hi = (area.right().saturating_sub(ww / 2)).min(src.bounds.w.checked_sub(ww)?);
    let y_hi = (area.bottom().saturating_sub(wh / 2)).min(src.bounds.h.checked_sub(wh)?);
    if x_lo > x_hi || y_lo > y_hi {
        return None;
    }
    Some(Rect::new(rng.gen_range(x_lo..=x_hi), rng.gen_range(y_lo..=y_hi), ww, wh))
}

fn truth_boxes(t: &SceneTruth, target: Target) -> Vec<Rect> {
    match target {
        Target::Face => vec![t.face_box],
        Target::Eye => vec![t.eyes.right_box, t.eyes.left_box],
    }
}

/// Window counted as a hit for `truth`.
pub const MATCH_IOU: f64 = 0.5;

/// Trains a face or eye cascade on generated scenes, mining negatives the
/// current cascade still accepts before each stage.
pub fn train_scene_cascade(recipe: &CascadeRecipe, exec: Exec) -> std::result::Result<CascadeModel, CascadeError> {
    let base = recipe.base();
    let sources: Vec<Source> = par::map_range(exec, recipe.scenes, |i| {
        let (img, truth) = scene_set_item(recipe.seed, i);
        Source { bounds: img.bounds(), ii: integral(&img), truth }
    });
    let mut rng = seed::rng(recipe.seed, &[0xca5]);
    let mut pos = Vec::new();
    for src in &sources {
        for b in truth_boxes(&src.truth, recipe.target) {
            pos.push(integral(&downsample_area(&src.ii, &b, base.0, base.1)));
            for _ in 0..recipe.jitter_copies {
                if let Some(j) = jittered(&b, &mut rng, 0.04, 0.05, &src.bounds) {
                    pos.push(integral(&downsample_area(&src.ii, &j, base.0, base.1)));
                }
            }
        }
    }
    let target = recipe.target;
    let attempts = recipe.attempts_per_negative;
    let mine = |model: &CascadeModel, n: usize| {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n.saturating_mul(attempts) {
            if out.len() == n {
                break;
            }
            let src = &sources[rng.gen_range(0..sources.len())];
            let Some(win) = random_window(src, target, base, &mut rng) else { continue };
            if truth_boxes(&src.truth, target).iter().any(|t| t.iou(&win) >= MATCH_IOU) {
                continue;
            }
            if eval_cascade_unchecked(&src.ii, model, &win).accepted {
                out.push(integral(&downsample_area(&src.ii, &win, base.0, base.1)));
            }
        }
        out
    };
    train_cascade(&pos, &recipe.pool(), &recipe.train, exec, mine)
}

/// Detection quality over generated scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scenes: usize,
    /// Scenes whose selected face overlaps the truth at IoU ≥ 0.5.
    pub faces_found: usize,
    pub windows_scanned: u64,
    /// Accepted face windows overlapping the truth face below IoU 0.5.
    pub false_windows: u64,
    /// Found faces where both eyes overlap their truth boxes at IoU ≥ 0.5.
    pub eyes_found: usize,
}

impl DetectionReport {
    pub fn face_tpr(&self) -> f64 {
        self.faces_found as f64 / self.scenes.max(1) as f64
    }

    pub fn window_fpr(&self) -> f64 {
        self.false_windows as f64 / self.windows_scanned.max(1) as f64
    }

    pub fn eye_rate(&self) -> f64 {
        self.eyes_found as f64 / self.faces_found.max(1) as f64
    }
}

/// Runs face and eye detection over scenes `0..n` of the set drawn from
/// `seed`.
pub fn evaluate_detection(
    face_model: &CascadeModel,
    eye_model: &CascadeModel,
    config: &PipelineConfig,
    seed: u64,
    n: usize,
    exec: Exec,
) -> DetectionReport {
    let per_scene = par::map_range(exec, n, |i| {
        let (img, truth) = scene_set_item(seed, i);
        let ii = integral(&img);
        let raw = scan(&ii, face_model, &img.bounds(), &config.face, Exec::Sequential);
        let false_windows = raw.accepted.iter().filter(|(r, _)| r.iou(&truth.face_box) < MATCH_IOU).count() as u64;
        let dets = group_scored(&raw.accepted, config.face.min_neighbors, config.face.iou_thresh);
        let face = select_face(&dets).map(|d| d.bbox).filter(|f| f.iou(&truth.face_box) >= MATCH_IOU);
        let eyes_ok = face.is_some_and(|f| {
            locate_eyes_in(&ii, &f, eye_model, &config.eye, Exec::Sequential).is_ok_and(|e| {
                e.right_box.iou(&truth.eyes.right_box) >= MATCH_IOU && e.left_box.iou(&truth.eyes.left_box) >= MATCH_IOU
            })
        });
        (face.is_some(), eyes_ok, raw.windows_scanned as u64, false_windows)
    });
    let mut r = DetectionReport { scenes: n, ..Default::default() };
    for (face, eyes, windows, false_windows) in per_scene {
        r.faces_found += usize::from(face);
        r.eyes_found += usize::from(eyes);
        r.windows_scanned += windows;
        r.false_windows += false_windows;
    }
    r
}
