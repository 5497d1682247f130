//! From a detected face to the network input.
//!
//! The composite is two 72×36 eye strips stacked vertically, the subject's
//! right eye (image-left) on top, binarized with Otsu.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{detect_in, CascadeModel, Detection, ScanParams};
use crate::dataset::{Label, Sample, INPUT_SIZE};
use crate::imaging::{binarize_otsu, crop, integral, resize_bilinear, BinaryImage, GrayImage, ImagingError, IntegralImage, Rect};
use crate::par::Exec;

pub const STRIP_HEIGHT: usize = INPUT_SIZE / 2;
/// Eyes are searched in this top fraction of the face box (percent).
pub const EYE_REGION_PERCENT: u32 = 55;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no face found")]
    FaceNotFound,
    #[error("eyes not found: {0}")]
    EyesNotFound(String),
    #[error("preprocessing failed: {0}")]
    Failed(ImagingError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Eye boxes named after the subject's eyes: `right_box` is on the image
/// left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EyePair {
    pub left_box: Rect,
    pub right_box: Rect,
}

/// Top part of the face box where eyes are searched.
pub fn eye_region(face: &Rect) -> Rect {
    let h = ((u64::from(face.h) * u64::from(EYE_REGION_PERCENT) + 50) / 100) as u32;
    Rect::new(face.x, face.y, face.w, h.max(1))
}

/// Eye-scan parameters for one face: unset width bounds default to 15–45 %
/// of the face width.
pub fn eye_scan_for(face: &Rect, eye: &ScanParams) -> ScanParams {
    let mut s = *eye;
    s.min_width = s.min_width.or(Some(face.w * 15 / 100));
    s.max_width = s.max_width.or(Some(face.w * 45 / 100));
    s
}

/// Highest-neighbor face; ties go to the larger box, then the topmost,
/// leftmost one.
pub fn select_face(dets: &[Detection]) -> Option<Detection> {
    dets.iter()
        .copied()
        .min_by(|a, b| {
            b.neighbors
                .cmp(&a.neighbors)
                .then(b.bbox.area().cmp(&a.bbox.area()))
                .then((a.bbox.y, a.bbox.x).cmp(&(b.bbox.y, b.bbox.x)))
        })
}

/// Best detection on each side of the face midline.
pub fn pick_eyes(face: &Rect, dets: &[Detection]) -> Result<EyePair> {
    if dets.is_empty() {
        return Err(PreprocessError::EyesNotFound("no eye detections".into()));
    }
    let mid2 = 2 * u64::from(face.x) + u64::from(face.w);
    let best = |image_left: bool| {
        dets.iter()
            .filter(|d| {
                let c2 = 2 * u64::from(d.bbox.x) + u64::from(d.bbox.w);
                (c2 < mid2) == image_left
            })
            .min_by(|a, b| b.neighbors.cmp(&a.neighbors).then(b.score.total_cmp(&a.score)))
            .map(|d| d.bbox)
    };
    match (best(true), best(false)) {
        (Some(right_box), Some(left_box)) => Ok(EyePair { left_box, right_box }),
        _ => Err(PreprocessError::EyesNotFound(format!("{} detections, all on one side of the face midline", dets.len()))),
    }
}

pub fn locate_eyes_in(ii: &IntegralImage, face: &Rect, eye_model: &CascadeModel, eye: &ScanParams, exec: Exec) -> Result<EyePair> {
    let roi = eye_region(face);
    let dets = detect_in(ii, eye_model, &roi, &eye_scan_for(face, eye), exec);
    pick_eyes(face, &dets)
}

pub fn locate_eyes(img: &GrayImage, face: &Rect, eye_model: &CascadeModel, eye: &ScanParams) -> Result<EyePair> {
    img.check_rect(face)?;
    locate_eyes_in(&integral(img), face, eye_model, eye, Exec::default())
}

/// Gray 72×72 composite before binarization.
pub fn compose_gray(img: &GrayImage, eyes: &EyePair) -> Result<GrayImage> {
    let top = resize_bilinear(&crop(img, &eyes.right_box)?, INPUT_SIZE, STRIP_HEIGHT)?;
    let bottom = resize_bilinear(&crop(img, &eyes.left_box)?, INPUT_SIZE, STRIP_HEIGHT)?;
    let mut data = top.into_data();
    data.extend_from_slice(bottom.data());
    Ok(GrayImage::new(INPUT_SIZE, INPUT_SIZE, data)?)
}

pub fn compose_eye_pair(img: &GrayImage, eyes: &EyePair) -> Result<BinaryImage> {
    let g = compose_gray(img, eyes)?;
    binarize_otsu(&g).map(|(b, _)| b).map_err(PreprocessError::Failed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub face: ScanParams,
    pub eye: ScanParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            face: ScanParams { min_width: Some(96), ..Default::default() },
            eye: ScanParams { min_neighbors: 2, ..Default::default() },
        }
    }
}

/// Wall-clock spent in each preprocessing stage of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub face: Duration,
    pub eyes: Duration,
    pub compose: Duration,
}

/// Result of running detection and preprocessing on one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub face: Rect,
    pub eyes: EyePair,
    pub sample: Sample,
}

pub struct Pipeline<'a> {
    pub face_model: &'a CascadeModel,
    pub eye_model: &'a CascadeModel,
    pub config: PipelineConfig,
    pub exec: Exec,
}

impl Pipeline<'_> {
    /// Detects, locates and composes, recording stage times as it goes
    /// (stages not reached keep zero).
    pub fn run_timed(
        &self,
        frame: &GrayImage,
        label: Option<Label>,
        subject_id: Option<String>,
        source_frame: &str,
        times: &mut StageTimes,
    ) -> Result<FrameResult> {
        let t = Instant::now();
        let ii = integral(frame);
        let dets = detect_in(&ii, self.face_model, &frame.bounds(), &self.config.face, self.exec);
        let face = select_face(&dets).map(|d| d.bbox);
        times.face = t.elapsed();
        let face = face.ok_or(PreprocessError::FaceNotFound)?;

        let t = Instant::now();
        let eyes = locate_eyes_in(&ii, &face, self.eye_model, &self.config.eye, self.exec);
        times.eyes = t.elapsed();
        let eyes = eyes?;

        let t = Instant::now();
        let gray = compose_gray(frame, &eyes);
        let sample = gray.and_then(|g| {
            Sample::from_gray(g, label, subject_id, source_frame.to_string()).map_err(|e| match e {
                crate::dataset::DatasetError::Imaging(i) => PreprocessError::Failed(i),
                other => unreachable!("composite is always 72x72: {other}"),
            })
        });
        times.compose = t.elapsed();
        Ok(FrameResult { face, eyes, sample: sample? })
    }

    pub fn run(&self, frame: &GrayImage, label: Option<Label>, subject_id: Option<String>, source_frame: &str) -> Result<FrameResult> {
        self.run_timed(frame, label, subject_id, source_frame, &mut StageTimes::default())
    }
}

pub fn frame_to_sample(
    frame: &GrayImage,
    face_model: &CascadeModel,
    eye_model: &CascadeModel,
    config: &PipelineConfig,
    label: Option<Label>,
    subject_id: Option<String>,
) -> Result<Sample> {
    let p = Pipeline { face_model, eye_model, config: *config, exec: Exec::default() };
    p.run(frame, label, subject_id, "frame").map(|r| r.sample)
}
