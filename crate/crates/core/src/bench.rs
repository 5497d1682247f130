//! Per-stage latency of the whole frame-to-label path.
//!
//! Each frame is timed once end to end and once per stage (face detection,
//! eye detection, composite preprocessing, CNN forward) with the monotonic
//! clock. The first [`WARMUP_FRAMES`] frames are dropped.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::CascadeModel;
use crate::cnn::{argmax, CnnError, Network, Tensor};
use crate::dataset::{Label, INPUT_SIZE};
use crate::imaging::GrayImage;
use crate::par::{self, Exec};
use crate::preprocess::{Pipeline, PipelineConfig, PreprocessError, StageTimes};

pub const WARMUP_FRAMES: usize = 5;
pub const MIN_TIMED_FRAMES: usize = 30;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {MIN_TIMED_FRAMES} timed frames after {WARMUP_FRAMES} warmup, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {found:?}, expected {expected:?}")]
    MixedSizes { index: usize, expected: (usize, usize), found: (usize, usize) },
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

/// What happened to one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Classified(Label),
    NoFace,
    NoEyes,
    /// The eye composite could not be binarized (e.g. a flat crop).
    BadComposite,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Classified(l) => f.write_str(l.name()),
            Outcome::NoFace => f.write_str("NO_FACE"),
            Outcome::NoEyes => f.write_str("NO_EYES"),
            Outcome::BadComposite => f.write_str("BAD_COMPOSITE"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTiming {
    pub stages: StageTimes,
    pub cnn: Duration,
    pub total: Duration,
    pub outcome: Outcome,
}

impl FrameTiming {
    pub fn stage_sum(&self) -> Duration {
        self.stages.face + self.stages.eyes + self.stages.compose + self.cnn
    }
}

/// Classifies one frame, timing every stage.
pub fn classify_frame(pipeline: &Pipeline<'_>, net: &Network<f32>, frame: &GrayImage, exec: Exec) -> Result<FrameTiming, BenchError> {
    let start = Instant::now();
    let mut stages = StageTimes::default();
    let res = pipeline.run_timed(frame, None, None, "frame", &mut stages);
    let mut cnn = Duration::ZERO;
    let outcome = match res {
        Ok(r) => {
            let t = Instant::now();
            let x = Tensor::new(&[1, 1, INPUT_SIZE, INPUT_SIZE], r.sample.to_f32())?;
            let logits = net.forward(&x, exec)?;
            let class = argmax(logits.data());
            cnn = t.elapsed();
            Outcome::Classified(Label::from_index(class).ok_or(CnnError::Label(class, 3))?)
        }
        Err(PreprocessError::FaceNotFound) => Outcome::NoFace,
        Err(PreprocessError::EyesNotFound(_)) => Outcome::NoEyes,
        Err(PreprocessError::Failed(_) | PreprocessError::Imaging(_)) => Outcome::BadComposite,
    };
    Ok(FrameTiming { stages, cnn, total: start.elapsed(), outcome })
}

/// Order statistics of one timing series, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl Summary {
    /// Nearest-rank percentiles.
    pub fn of(durations: impl IntoIterator<Item = Duration>) -> Summary {
        let mut ms: Vec<f64> = durations.into_iter().map(|d| d.as_secs_f64() * 1e3).collect();
        if ms.is_empty() {
            return Summary::default();
        }
        ms.sort_by(f64::total_cmp);
        let rank = |q: f64| ms[((q * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Summary { p50_ms: rank(0.5), p95_ms: rank(0.95), max_ms: ms[ms.len() - 1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    pub face_detect: Summary,
    pub eye_detect: Summary,
    pub preprocess: Summary,
    pub cnn_forward: Summary,
    pub end_to_end: Summary,
    /// Frames that stopped before the CNN (no face, no eyes, bad composite).
    pub failed_frames: usize,
    /// |Σ end-to-end − Σ stages| / Σ end-to-end over all timed frames.
    pub stage_sum_gap: f64,
}

impl LatencyReport {
    pub fn from_timings(timings: &[FrameTiming], width: usize, height: usize, threads: usize) -> LatencyReport {
        let total: f64 = timings.iter().map(|t| t.total.as_secs_f64()).sum();
        let stages: f64 = timings.iter().map(|t| t.stage_sum().as_secs_f64()).sum();
        LatencyReport {
            frames: timings.len(),
            width,
            height,
            threads,
            face_detect: Summary::of(timings.iter().map(|t| t.stages.face)),
            eye_detect: Summary::of(timings.iter().map(|t| t.stages.eyes)),
            preprocess: Summary::of(timings.iter().map(|t| t.stages.compose)),
            cnn_forward: Summary::of(timings.iter().map(|t| t.cnn)),
            end_to_end: Summary::of(timings.iter().map(|t| t.total)),
            failed_frames: timings.iter().filter(|t| !matches!(t.outcome, Outcome::Classified(_))).count(),
            stage_sum_gap: if total > 0.0 { (total - stages).abs() / total } else { 0.0 },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn rows(&self) -> [(&'static str, &Summary); 5] {
        [
            ("face detect", &self.face_detect),
            ("eye detect", &self.eye_detect),
            ("preprocess", &self.preprocess),
            ("cnn forward", &self.cnn_forward),
            ("end to end", &self.end_to_end),
        ]
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} frames of {}x{}, {} thread(s), {} failed",
            self.frames, self.width, self.height, self.threads, self.failed_frames
        )?;
        writeln!(f, "{:<12} {:>9} {:>9} {:>9}", "stage", "p50 ms", "p95 ms", "max ms")?;
        for (name, s) in self.rows() {
            writeln!(f, "{name:<12} {:>9.3} {:>9.3} {:>9.3}", s.p50_ms, s.p95_ms, s.max_ms)?;
        }
        write!(f, "stage sum vs end to end: {:.2}%", 100.0 * self.stage_sum_gap)
    }
}

/// Runs every frame `repetitions` times in order and reports the timings
/// after warmup.
pub fn bench_pipeline(
    frames: &[GrayImage],
    face_model: &CascadeModel,
    eye_model: &CascadeModel,
    net: &Network<f32>,
    config: &PipelineConfig,
    repetitions: usize,
    exec: Exec,
) -> Result<LatencyReport, BenchError> {
    let runs = frames.len() * repetitions;
    if runs < WARMUP_FRAMES + MIN_TIMED_FRAMES {
        return Err(BenchError::TooFewFrames(runs.saturating_sub(WARMUP_FRAMES)));
    }
    let expected = (frames[0].width(), frames[0].height());
    for (index, f) in frames.iter().enumerate() {
        if (f.width(), f.height()) != expected {
            return Err(BenchError::MixedSizes { index, expected, found: (f.width(), f.height()) });
        }
    }
    let pipeline = Pipeline { face_model, eye_model, config: *config, exec };
    let mut timings = Vec::with_capacity(runs - WARMUP_FRAMES);
    for i in 0..runs {
        let t = classify_frame(&pipeline, net, &frames[i % frames.len()], exec)?;
        if i >= WARMUP_FRAMES {
            timings.push(t);
        }
    }
    Ok(LatencyReport::from_timings(&timings, expected.0, expected.1, par::threads(exec)))
}
