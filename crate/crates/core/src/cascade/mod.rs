//! Viola-Jones style staged detectors over Haar or LBP features.

mod boost;
mod detect;
mod features;
mod io;

pub use boost::{
    train_cascade, train_stage_adaboost, train_stage_traced, CascadeTrainConfig, FeaturePool,
    RoundStats, StageTarget,
};
pub use detect::{
    detect, detect_in, group_detections, group_scored, scan, scan_windows, Detection, ScanParams,
    ScanResult,
};
pub use features::{
    eval_haar, eval_lbp, haar_pool, lbp_pool, HaarFeature, LbpFeature, WeightedRect, Window,
};
pub use io::{load_cascade, load_cascade_file, save_cascade, save_cascade_file};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImagingError, IntegralImage, Rect};
use features::{check_window, eval_haar_unchecked, eval_lbp_unchecked, Scaler};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error(transparent)]
    Bounds(#[from] ImagingError),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid feature: {0}")]
    InvalidFeature(String),
    #[error("cascade parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported cascade format_version {0}")]
    Version(u64),
    #[error("invalid cascade at stage {stage}{}: {message}", weak.map(|w| format!(", weak {w}")).unwrap_or_default())]
    Validation { stage: usize, weak: Option<usize>, message: String },
    #[error("invalid cascade: {0}")]
    Model(String),
    #[error("stage training failed: {0}")]
    StageTrainingFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Haar,
    Lbp,
}

/// 256-bit set of LBP codes. Code `c` lives in word `c / 64`, bit `c % 64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LbpMask(pub [u64; 4]);

impl LbpMask {
    #[inline]
    pub fn contains(&self, code: u8) -> bool {
        self.0[(code >> 6) as usize] >> (code & 63) & 1 == 1
    }

    pub fn insert(&mut self, code: u8) {
        self.0[(code >> 6) as usize] |= 1 << (code & 63);
    }

    pub fn len(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeakClassifier {
    /// Votes `left` when the feature value is below `threshold`, else `right`.
    Stump { feature: HaarFeature, threshold: f64, left: f64, right: f64 },
    /// Votes `pass` when the code is in `mask`, else `fail`.
    Lbp { feature: LbpFeature, mask: LbpMask, pass: f64, fail: f64 },
}

impl WeakClassifier {
    pub fn kind(&self) -> FeatureKind {
        match self {
            WeakClassifier::Stump { .. } => FeatureKind::Haar,
            WeakClassifier::Lbp { .. } => FeatureKind::Lbp,
        }
    }

    fn base(&self) -> Window {
        match self {
            WeakClassifier::Stump { feature, .. } => feature.base(),
            WeakClassifier::Lbp { feature, .. } => feature.base(),
        }
    }

    fn votes_finite(&self) -> bool {
        match *self {
            WeakClassifier::Stump { threshold, left, right, .. } => {
                threshold.is_finite() && left.is_finite() && right.is_finite()
            }
            WeakClassifier::Lbp { pass, fail, .. } => pass.is_finite() && fail.is_finite(),
        }
    }

    #[inline]
    fn vote(&self, ii: &IntegralImage, s: &Scaler) -> f64 {
        match self {
            WeakClassifier::Stump { feature, threshold, left, right } => {
                if eval_haar_unchecked(ii, feature, s) < *threshold {
                    *left
                } else {
                    *right
                }
            }
            WeakClassifier::Lbp { feature, mask, pass, fail } => {
                if mask.contains(eval_lbp_unchecked(ii, feature, s)) {
                    *pass
                } else {
                    *fail
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub weak: Vec<WeakClassifier>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    feature_kind: FeatureKind,
    base_window: Window,
    stages: Vec<Stage>,
}

impl CascadeModel {
    /// Builds a model after checking every structural invariant.
    pub fn new(feature_kind: FeatureKind, base_window: Window, stages: Vec<Stage>) -> Result<Self> {
        if base_window.0 == 0 || base_window.1 == 0 {
            return Err(CascadeError::Model(format!("empty base window {base_window:?}")));
        }
        for (si, st) in stages.iter().enumerate() {
            let err = |weak, message: String| CascadeError::Validation { stage: si, weak, message };
            if st.weak.is_empty() {
                return Err(err(None, "stage has no weak classifiers".into()));
            }
            if !st.threshold.is_finite() {
                return Err(err(None, "non-finite stage threshold".into()));
            }
            for (wi, w) in st.weak.iter().enumerate() {
                if w.kind() != feature_kind {
                    return Err(err(Some(wi), format!("{:?} classifier in {feature_kind:?} cascade", w.kind())));
                }
                if w.base() != base_window {
                    return Err(err(Some(wi), format!("feature base {:?} != {base_window:?}", w.base())));
                }
                if !w.votes_finite() {
                    return Err(err(Some(wi), "non-finite vote or threshold".into()));
                }
            }
        }
        Ok(CascadeModel { feature_kind, base_window, stages })
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    pub fn base_window(&self) -> Window {
        self.base_window
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn push_stage(&mut self, stage: Stage) -> Result<()> {
        let mut stages = std::mem::take(&mut self.stages);
        stages.push(stage);
        *self = CascadeModel::new(self.feature_kind, self.base_window, stages)?;
        Ok(())
    }

    pub fn weak_count(&self) -> usize {
        self.stages.iter().map(|s| s.weak.len()).sum()
    }
}

/// Result of running a cascade on one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeOutcome {
    pub accepted: bool,
    pub stages_passed: usize,
    /// Vote sum of the last stage evaluated (0 for a stageless model).
    pub score: f64,
    /// Number of weak classifiers evaluated.
    pub weak_evaluations: usize,
}

/// Evaluates stages in order and stops at the first whose vote sum falls
/// below its threshold.
pub fn eval_cascade(ii: &IntegralImage, model: &CascadeModel, window: &Rect) -> Result<CascadeOutcome> {
    check_window(ii, model.base_window, window)?;
    Ok(eval_cascade_unchecked(ii, model, window))
}

#[inline]
pub(crate) fn eval_cascade_unchecked(ii: &IntegralImage, model: &CascadeModel, window: &Rect) -> CascadeOutcome {
    let s = Scaler::new(model.base_window, window);
    let mut out = CascadeOutcome { accepted: true, stages_passed: 0, score: 0.0, weak_evaluations: 0 };
    for stage in &model.stages {
        let mut sum = 0.0;
        for w in &stage.weak {
            sum += w.vote(ii, &s);
        }
        out.weak_evaluations += stage.weak.len();
        out.score = sum;
        if sum < stage.threshold {
            out.accepted = false;
            return out;
        }
        out.stages_passed += 1;
    }
    out
}
