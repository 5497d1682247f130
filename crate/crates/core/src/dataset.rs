//! Labeled samples, JSON-lines manifests, augmentation and splits.
//!
//! Manifest lines look like
//! `{"path":"s03/f0007.pgm","label":1,"subject":"s03","origin":"original","seed_tag":7}`
//! with paths relative to the manifest's directory. Sample images are stored
//! as the gray eye-pair composite; loading binarizes them.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{binarize_otsu, read_pgm_file, BinaryImage, GrayImage, ImagingError};
use crate::par::{self, Exec};
use crate::seed;

/// Side of the square network input.
pub const INPUT_SIZE: usize = 72;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("class {0:?} has no samples; cannot stratify")]
    EmptyClass(Label),
    #[error("{subjects} distinct subjects, need at least k = {k}")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("{path}: {source}")]
    Image { path: String, source: ImagingError },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Gaze class. Left and right are the subject's own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Right = 0,
    Left = 1,
    Vague = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Right, Label::Left, Label::Vague];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Right => "right",
            Label::Left => "left",
            Label::Vague => "vague",
        }
    }

    /// Label of the mirrored face.
    pub fn flipped(self) -> Label {
        match self {
            Label::Right => Label::Left,
            Label::Left => Label::Right,
            Label::Vague => Label::Vague,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label {v} out of range 0..=2"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "right" | "0" => Ok(Label::Right),
            "left" | "1" => Ok(Label::Left),
            "vague" | "2" => Ok(Label::Vague),
            _ => Err(format!("unknown label `{s}` (right, left, vague)")),
        }
    }
}

/// One network input with its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    input: BinaryImage,
    /// Composite before binarization, kept when known so augmentation can
    /// work on it.
    gray: Option<GrayImage>,
    pub label: Option<Label>,
    pub subject_id: Option<String>,
    pub source_frame: String,
}

impl Sample {
    pub fn new(input: BinaryImage, label: Option<Label>, subject_id: Option<String>, source_frame: String) -> Result<Self> {
        if input.width() != INPUT_SIZE || input.height() != INPUT_SIZE {
            return Err(DatasetError::Sample(format!(
                "input is {}x{}, expected {INPUT_SIZE}x{INPUT_SIZE}",
                input.width(),
                input.height()
            )));
        }
        Ok(Sample { input, gray: None, label, subject_id, source_frame })
    }

    /// Binarizes a gray composite with Otsu and keeps the composite.
    pub fn from_gray(gray: GrayImage, label: Option<Label>, subject_id: Option<String>, source_frame: String) -> Result<Self> {
        let (bin, _) = binarize_otsu(&gray)?;
        let mut s = Sample::new(bin, label, subject_id, source_frame)?;
        s.gray = Some(gray);
        Ok(s)
    }

    pub fn input(&self) -> &BinaryImage {
        &self.input
    }

    pub fn gray(&self) -> Option<&GrayImage> {
        self.gray.as_ref()
    }

    /// The composite the binary input was made from, or the binary input
    /// scaled to 0/255 when it is unknown.
    pub fn gray_or_binary(&self) -> GrayImage {
        self.gray.clone().unwrap_or_else(|| self.input.to_gray())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.input.to_f32()
    }

    pub fn label(&self) -> Result<Label> {
        self.label.ok_or_else(|| DatasetError::Sample(format!("{} has no label", self.source_frame)))
    }
}

/// Mirror of a two-strip composite: each strip is mirrored and the strips
/// trade places, which is what mirroring the whole face does.
pub fn flip_composite(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let half = h / 2;
    GrayImage::from_fn(w, h, |x, y| {
        let sy = if h % 2 == 0 { (y + half) % h } else { h - 1 - y };
        img.get(w - 1 - x, sy)
    })
    .expect("same dimensions")
}

fn flip_binary(img: &BinaryImage) -> BinaryImage {
    let g = flip_composite(&GrayImage::new(img.width(), img.height(), img.data().to_vec()).expect("valid"));
    BinaryImage::new(g.width(), g.height(), g.into_data()).expect("still binary")
}

/// Mirrors the sample and swaps left and right.
pub fn flip_sample(s: &Sample) -> Sample {
    Sample {
        input: flip_binary(&s.input),
        gray: s.gray.as_ref().map(flip_composite),
        label: s.label.map(Label::flipped),
        subject_id: s.subject_id.clone(),
        source_frame: s.source_frame.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOps {
    /// Shift by up to ±3 px on each axis.
    pub translate: bool,
    /// Rotate by up to ±8°.
    pub rotate: bool,
    /// Add up to ±25 to every intensity.
    pub brightness: bool,
    /// Scale contrast around the mean by 0.8–1.2.
    pub contrast: bool,
    /// Mirror with probability 1/2.
    pub horizontal_flip: bool,
}

impl Default for AugmentOps {
    fn default() -> Self {
        AugmentOps { translate: true, rotate: true, brightness: true, contrast: true, horizontal_flip: true }
    }
}

impl AugmentOps {
    pub fn none() -> Self {
        AugmentOps { translate: false, rotate: false, brightness: false, contrast: false, horizontal_flip: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Outputs per input, the untouched original included.
    pub multiplier: usize,
    pub ops: AugmentOps,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { multiplier: 159, ops: AugmentOps::default(), seed: 42 }
    }
}

pub const MAX_SHIFT: f64 = 3.0;
pub const MAX_ROTATE_DEG: f64 = 8.0;
pub const MAX_BRIGHTNESS: f64 = 25.0;
pub const CONTRAST_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Clone, Copy, Debug, PartialEq)]
struct Jitter {
    dx: f64,
    dy: f64,
    angle: f64,
    brightness: f64,
    contrast: f64,
    flip: bool,
}

impl Jitter {
    fn draw(ops: &AugmentOps, rng: &mut impl Rng) -> Jitter {
        // Always draw every value so enabling one op does not shift the
        // stream of the others.
        let dx = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
        let dy = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
        let angle = rng.gen_range(-MAX_ROTATE_DEG..=MAX_ROTATE_DEG).to_radians();
        let brightness = rng.gen_range(-MAX_BRIGHTNESS..=MAX_BRIGHTNESS);
        let contrast = rng.gen_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
        let flip = rng.gen_bool(0.5);
        Jitter {
            dx: if ops.translate { dx } else { 0.0 },
            dy: if ops.translate { dy } else { 0.0 },
            angle: if ops.rotate { angle } else { 0.0 },
            brightness: if ops.brightness { brightness } else { 0.0 },
            contrast: if ops.contrast { contrast } else { 1.0 },
            flip: ops.horizontal_flip && flip,
        }
    }
}

fn sample_bilinear(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
    let (fx, fy) = (sx - ix as f64, sy - iy as f64);
    let (jx, jy) = ((ix + 1).min(w - 1), (iy + 1).min(h - 1));
    let p = |x: usize, y: usize| f64::from(img.get(x0 + x, y0 + y));
    let top = p(ix, iy) * (1.0 - fx) + p(jx, iy) * fx;
    let bottom = p(ix, jy) * (1.0 - fx) + p(jx, jy) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Applies one geometric + photometric jitter to each strip of a composite.
fn jitter_composite(img: &GrayImage, j: &Jitter) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let sh = h / 2;
    let mean = img.mean();
    let (sin, cos) = j.angle.sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (sh as f64 - 1.0) / 2.0);
    let out = GrayImage::from_fn(w, h, |x, y| {
        let (y0, sh_here) = if y < sh { (0, sh) } else { (sh, h - sh) };
        let (px, py) = (x as f64 - cx - j.dx, (y - y0) as f64 - cy - j.dy);
        // inverse rotation maps output pixels back into the source strip
        let sx = cos * px + sin * py + cx;
        let sy = -sin * px + cos * py + cy;
        let v = sample_bilinear(img, 0, y0, w, sh_here, sx, sy);
        let v = (v - mean) * j.contrast + mean + j.brightness;
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("same dimensions");
    if j.flip {
        flip_composite(&out)
    } else {
        out
    }
}

/// `cfg.multiplier` samples derived from `s`: the original first, then
/// jittered copies, each drawn from its own stream keyed by the sample's
/// source frame and output index.
pub fn augment(s: &Sample, cfg: &AugmentConfig) -> Result<Vec<Sample>> {
    if cfg.multiplier == 0 {
        return Err(DatasetError::Param("augmentation multiplier must be at least 1".into()));
    }
    let gray = s.gray_or_binary();
    let key = seed::hash_str(&s.source_frame);
    let mut out = Vec::with_capacity(cfg.multiplier);
    out.push(s.clone());
    for i in 1..cfg.multiplier {
        let mut rng = seed::rng(cfg.seed, &[key, i as u64]);
        let j = Jitter::draw(&cfg.ops, &mut rng);
        let g = jitter_composite(&gray, &j);
        let label = if j.flip { s.label.map(Label::flipped) } else { s.label };
        let a = Sample::from_gray(g, label, s.subject_id.clone(), format!("{}#aug{i}", s.source_frame))
            .map_err(|e| DatasetError::Sample(format!("augmenting {}: {e}", s.source_frame)))?;
        out.push(a);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    pub subject: String,
    pub origin: Origin,
    pub seed_tag: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Manifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn subjects(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.subject.as_str()).collect()
    }

    /// Checks path uniqueness and non-empty subjects; errors carry 1-based
    /// line numbers.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            check_entry(e, &mut seen).map_err(|message| DatasetError::Line { line: i + 1, message })?;
        }
        Ok(())
    }

    /// Subset in the given index order.
    pub fn select(&self, idx: &[usize]) -> Manifest {
        Manifest { entries: idx.iter().map(|&i| self.entries[i].clone()).collect() }
    }
}

fn check_entry<'a>(e: &'a ManifestEntry, seen: &mut HashSet<&'a str>) -> std::result::Result<(), String> {
    if e.subject.is_empty() {
        return Err("empty subject".into());
    }
    if e.path.is_empty() {
        return Err("empty path".into());
    }
    if !seen.insert(e.path.as_str()) {
        return Err(format!("duplicate path `{}`", e.path));
    }
    Ok(())
}

pub fn load_manifest<R: BufRead>(source: R) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry =
            serde_json::from_str(&line).map_err(|err| DatasetError::Line { line: i + 1, message: err.to_string() })?;
        entries.push((i + 1, e));
    }
    let mut seen = HashSet::new();
    for (line, e) in &entries {
        check_entry(e, &mut seen).map_err(|message| DatasetError::Line { line: *line, message })?;
    }
    Ok(Manifest { entries: entries.into_iter().map(|(_, e)| e).collect() })
}

pub fn load_manifest_file(path: impl AsRef<Path>) -> Result<Manifest> {
    let f = std::fs::File::open(path)?;
    load_manifest(std::io::BufReader::new(f))
}

pub fn save_manifest<W: Write>(m: &Manifest, mut sink: W) -> Result<()> {
    for e in &m.entries {
        serde_json::to_writer(&mut sink, e).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn save_manifest_file(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_manifest(m, std::io::BufWriter::new(f))
}

/// Reads every entry's image relative to `base_dir`.
pub fn load_samples(m: &Manifest, base_dir: &Path, exec: Exec) -> Result<Vec<Sample>> {
    par::map(exec, &m.entries, |e| {
        let p = base_dir.join(&e.path);
        let img = read_pgm_file(&p).map_err(|source| DatasetError::Image { path: p.display().to_string(), source })?;
        if img.width() != INPUT_SIZE || img.height() != INPUT_SIZE {
            return Err(DatasetError::Sample(format!("{}: {}x{} image", e.path, img.width(), img.height())));
        }
        Sample::from_gray(img, Some(e.label), Some(e.subject.clone()), e.path.clone())
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test split with `|test| = round(N·test_fraction)`.
///
/// With `stratify`, per-class test counts are apportioned by largest
/// remainder, so each class is within one sample of its exact share.
pub fn split_indices(labels: &[Label], test_fraction: f64, seed: u64, stratify: bool) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Param(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = labels.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut rng = seed::rng(seed, &[0x5917]);
    let mut test = Vec::with_capacity(n_test);
    if stratify {
        let mut by_class: BTreeMap<Label, Vec<usize>> = Label::ALL.iter().map(|&l| (l, Vec::new())).collect();
        for (i, &l) in labels.iter().enumerate() {
            by_class.get_mut(&l).expect("all labels present").push(i);
        }
        if let Some((&l, _)) = by_class.iter().find(|(_, v)| v.is_empty()) {
            return Err(DatasetError::EmptyClass(l));
        }
        // exact shares n_c·n_test/N as integer quotient and remainder
        let mut quota: Vec<(usize, usize, Label)> = by_class
            .iter()
            .map(|(&l, v)| (v.len() * n_test / n, v.len() * n_test % n, l))
            .collect();
        let short = n_test - quota.iter().map(|q| q.0).sum::<usize>();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| quota[b].1.cmp(&quota[a].1).then(a.cmp(&b)));
        for &i in order.iter().take(short) {
            quota[i].0 += 1;
        }
        for (take, _, l) in quota {
            let mut members = by_class.remove(&l).expect("present");
            members.shuffle(&mut rng);
            test.extend_from_slice(&members[..take]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        test.extend_from_slice(&all[..n_test]);
    }
    test.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test {
        is_test[i] = true;
    }
    let train = (0..n).filter(|&i| !is_test[i]).collect();
    Ok(Split { train, test })
}

pub fn split_shuffle(m: &Manifest, test_fraction: f64, seed: u64, stratify: bool) -> Result<Split> {
    split_indices(&m.labels(), test_fraction, seed, stratify)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Split>,
    /// Held-out subjects per fold.
    pub test_subjects: Vec<Vec<String>>,
}

/// Subject-grouped k-fold: distinct subjects are sorted, shuffled by `seed`
/// and dealt round-robin into `k` folds.
pub fn grouped_kfold_subjects(subjects: &[&str], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(DatasetError::Param(format!("k = {k}, need at least 2 folds")));
    }
    let mut distinct: Vec<&str> = subjects.iter().copied().collect::<HashSet<_>>().into_iter().collect();
    distinct.sort_unstable();
    if distinct.len() < k {
        return Err(DatasetError::TooFewSubjects { subjects: distinct.len(), k });
    }
    distinct.shuffle(&mut seed::rng(seed, &[0x6f1d]));
    let fold_of: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, &s)| (s, i % k)).collect();
    let mut test_subjects = vec![Vec::new(); k];
    for (i, s) in distinct.iter().enumerate() {
        test_subjects[i % k].push(s.to_string());
    }
    for t in &mut test_subjects {
        t.sort();
    }
    let folds = (0..k)
        .map(|f| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, s) in subjects.iter().enumerate() {
                if fold_of[s] == f {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            Split { train, test }
        })
        .collect();
    Ok(FoldPlan { folds, test_subjects })
}

pub fn grouped_kfold(m: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    grouped_kfold_subjects(&m.subjects(), k, seed)
}
