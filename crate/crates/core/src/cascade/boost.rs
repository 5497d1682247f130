//! Discrete AdaBoost stage training and greedy cascade construction.

use super::features::{eval_haar_unchecked, eval_lbp_unchecked, Scaler};
use super::{CascadeError, CascadeModel, FeatureKind, HaarFeature, LbpFeature, LbpMask, Result, Stage, WeakClassifier, Window};
use crate::imaging::{IntegralImage, Rect};
use crate::par::{self, Exec};

#[derive(Clone, Debug)]
pub enum FeaturePool {
    Haar(Vec<HaarFeature>),
    Lbp(Vec<LbpFeature>),
}

impl FeaturePool {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeaturePool::Haar(_) => FeatureKind::Haar,
            FeaturePool::Lbp(_) => FeatureKind::Lbp,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FeaturePool::Haar(v) => v.len(),
            FeaturePool::Lbp(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn base(&self) -> Option<Window> {
        match self {
            FeaturePool::Haar(v) => v.first().map(|f| f.base()),
            FeaturePool::Lbp(v) => v.first().map(|f| f.base()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageTarget {
    pub min_tpr: f64,
    pub max_fpr: f64,
    /// Weak-classifier budget for the stage.
    pub max_weak: usize,
}

impl Default for StageTarget {
    fn default() -> Self {
        StageTarget { min_tpr: 0.995, max_fpr: 0.5, max_weak: 50 }
    }
}

/// Bookkeeping for one boosting round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundStats {
    pub weighted_error: f64,
    pub alpha: f64,
    /// Sum of sample weights after renormalization.
    pub weight_sum: f64,
    /// Running product of the per-round normalizers; bounds the training error.
    pub loss_bound: f64,
    /// Fraction of the pool misclassified by the sign of the boosted score.
    pub train_error: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Feature responses precomputed over the training pool.
enum Responses {
    /// Per feature: values and the sample order sorting them ascending.
    Haar(Vec<(Vec<f64>, Vec<u32>)>),
    Lbp(Vec<Vec<u8>>),
}

fn base_rect(base: Window) -> Rect {
    Rect::new(0, 0, base.0, base.1)
}

fn responses(samples: &[&IntegralImage], pool: &FeaturePool, base: Window, exec: Exec) -> Responses {
    let s = Scaler::new(base, &base_rect(base));
    match pool {
        FeaturePool::Haar(fs) => Responses::Haar(par::map(exec, fs, |f| {
            let vals: Vec<f64> = samples.iter().map(|ii| eval_haar_unchecked(ii, f, &s)).collect();
            let mut order: Vec<u32> = (0..vals.len() as u32).collect();
            order.sort_by(|&a, &b| vals[a as usize].total_cmp(&vals[b as usize]).then(a.cmp(&b)));
            (vals, order)
        })),
        FeaturePool::Lbp(fs) => Responses::Lbp(par::map(exec, fs, |f| {
            samples.iter().map(|ii| eval_lbp_unchecked(ii, f, &s)).collect()
        })),
    }
}

/// Weak learner fitted to one feature.
enum Learner {
    Stump { threshold: f64, polarity: f64 },
    Mask(LbpMask),
}

fn best_stump(vals: &[f64], order: &[u32], labels: &[bool], w: &[f64], wpos: f64, wneg: f64) -> (f64, Learner) {
    // predicting positive for value >= threshold (polarity +1) or below it (-1)
    let (mut below_pos, mut below_neg) = (0.0, 0.0);
    let mut best = (f64::INFINITY, f64::NEG_INFINITY, 1.0);
    let n = order.len();
    for k in 0..=n {
        let threshold = if k == 0 {
            f64::NEG_INFINITY
        } else if k == n {
            f64::INFINITY
        } else {
            let (a, b) = (vals[order[k - 1] as usize], vals[order[k] as usize]);
            if a == b {
                let i = order[k] as usize;
                if labels[i] { below_pos += w[i] } else { below_neg += w[i] }
                continue;
            }
            0.5 * (a + b)
        };
        let err_up = below_pos + (wneg - below_neg);
        let err_down = below_neg + (wpos - below_pos);
        if err_up < best.0 {
            best = (err_up, threshold, 1.0);
        }
        if err_down < best.0 {
            best = (err_down, threshold, -1.0);
        }
        if k < n {
            let i = order[k] as usize;
            if labels[i] { below_pos += w[i] } else { below_neg += w[i] }
        }
    }
    // infinite thresholds only arise for constant responses; keep them finite
    let threshold = best.1.clamp(f64::MIN, f64::MAX);
    (best.0, Learner::Stump { threshold, polarity: best.2 })
}

fn best_mask(codes: &[u8], labels: &[bool], w: &[f64]) -> (f64, Learner) {
    let mut pos = [0.0f64; 256];
    let mut neg = [0.0f64; 256];
    for (i, &c) in codes.iter().enumerate() {
        if labels[i] { pos[c as usize] += w[i] } else { neg[c as usize] += w[i] }
    }
    let mut mask = LbpMask::default();
    let mut err = 0.0;
    for c in 0..256 {
        if pos[c] > neg[c] {
            mask.insert(c as u8);
            err += neg[c];
        } else {
            err += pos[c];
        }
    }
    (err, Learner::Mask(mask))
}

/// Trains one boosted stage, returning per-round statistics as well.
///
/// Samples must be integral images of exactly the pool's base window.
pub fn train_stage_traced(
    pos: &[IntegralImage],
    neg: &[IntegralImage],
    pool: &FeaturePool,
    target: &StageTarget,
    exec: Exec,
) -> Result<(Stage, Vec<RoundStats>)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(CascadeError::StageTrainingFailed("need both positive and negative samples".into()));
    }
    let base = pool
        .base()
        .ok_or_else(|| CascadeError::StageTrainingFailed("empty feature pool".into()))?;
    let samples: Vec<&IntegralImage> = pos.iter().chain(neg.iter()).collect();
    if let Some(bad) = samples.iter().find(|ii| (ii.width() as u32, ii.height() as u32) != base) {
        return Err(CascadeError::StageTrainingFailed(format!(
            "sample is {}x{}, pool base window is {}x{}",
            bad.width(),
            bad.height(),
            base.0,
            base.1
        )));
    }
    let labels: Vec<bool> = (0..samples.len()).map(|i| i < pos.len()).collect();
    let resp = responses(&samples, pool, base, exec);
    let n = samples.len();

    let mut w: Vec<f64> = labels
        .iter()
        .map(|&y| if y { 0.5 / pos.len() as f64 } else { 0.5 / neg.len() as f64 })
        .collect();
    let mut score = vec![0.0f64; n];
    let mut weak = Vec::new();
    let mut rounds = Vec::new();
    let mut loss_bound = 1.0;

    while weak.len() < target.max_weak {
        let (wpos, wneg) = labels.iter().zip(&w).fold((0.0, 0.0), |(p, q), (&y, &wi)| {
            if y { (p + wi, q) } else { (p, q + wi) }
        });
        let candidates: Vec<(f64, Learner)> = match &resp {
            Responses::Haar(r) => par::map(exec, r, |(vals, order)| best_stump(vals, order, &labels, &w, wpos, wneg)),
            Responses::Lbp(r) => par::map(exec, r, |codes| best_mask(codes, &labels, &w)),
        };
        let (fi, (err, learner)) = candidates
            .into_iter()
            .enumerate()
            .fold(None::<(usize, (f64, Learner))>, |best, (i, c)| match best {
                Some(b) if b.1 .0 <= c.0 => Some(b),
                _ => Some((i, c)),
            })
            .expect("non-empty pool");
        if err >= 0.5 - 1e-12 {
            return Err(CascadeError::StageTrainingFailed(format!(
                "round {}: best weighted error {err:.6} is no better than chance",
                weak.len() + 1
            )));
        }
        let e = err.max(1e-10);
        let alpha = 0.5 * ((1.0 - e) / e).ln();

        let (classifier, h): (WeakClassifier, Vec<f64>) = match (&resp, learner, pool) {
            (Responses::Haar(r), Learner::Stump { threshold, polarity }, FeaturePool::Haar(fs)) => {
                let vals = &r[fi].0;
                let h = vals.iter().map(|&v| if v >= threshold { polarity } else { -polarity }).collect();
                let c = WeakClassifier::Stump {
                    feature: fs[fi].clone(),
                    threshold,
                    left: -polarity * alpha,
                    right: polarity * alpha,
                };
                (c, h)
            }
            (Responses::Lbp(r), Learner::Mask(mask), FeaturePool::Lbp(fs)) => {
                let h = r[fi].iter().map(|&c| if mask.contains(c) { 1.0 } else { -1.0 }).collect();
                (WeakClassifier::Lbp { feature: fs[fi], mask, pass: alpha, fail: -alpha }, h)
            }
            _ => unreachable!("responses follow the pool kind"),
        };

        let mut z = 0.0;
        for i in 0..n {
            let y = if labels[i] { 1.0 } else { -1.0 };
            w[i] *= (-alpha * y * h[i]).exp();
            z += w[i];
            score[i] += alpha * h[i];
        }
        for wi in w.iter_mut() {
            *wi /= z;
        }
        loss_bound *= z;
        weak.push(classifier);

        let threshold = stage_threshold(&score[..pos.len()], target.min_tpr);
        let tp = score[..pos.len()].iter().filter(|&&s| s >= threshold).count();
        let fp = score[pos.len()..].iter().filter(|&&s| s >= threshold).count();
        let wrong = (0..n).filter(|&i| (score[i] >= 0.0) != labels[i]).count();
        let stats = RoundStats {
            weighted_error: err,
            alpha,
            weight_sum: w.iter().sum(),
            loss_bound,
            train_error: wrong as f64 / n as f64,
            tpr: tp as f64 / pos.len() as f64,
            fpr: fp as f64 / neg.len() as f64,
        };
        rounds.push(stats);
        if stats.tpr >= target.min_tpr && stats.fpr <= target.max_fpr {
            return Ok((Stage { weak, threshold }, rounds));
        }
    }
    let last = rounds.last().copied();
    Err(CascadeError::StageTrainingFailed(format!(
        "budget of {} weak classifiers exhausted (tpr {:.4}, fpr {:.4}; wanted tpr >= {}, fpr <= {})",
        target.max_weak,
        last.map_or(0.0, |s| s.tpr),
        last.map_or(1.0, |s| s.fpr),
        target.min_tpr,
        target.max_fpr
    )))
}

/// Highest threshold that keeps at least `min_tpr` of the positive scores.
fn stage_threshold(pos_scores: &[f64], min_tpr: f64) -> f64 {
    let mut s = pos_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let misses = (((1.0 - min_tpr) * s.len() as f64) + 1e-9).floor() as usize;
    s[misses.min(s.len() - 1)]
}

pub fn train_stage_adaboost(
    pos: &[IntegralImage],
    neg: &[IntegralImage],
    pool: &FeaturePool,
    target: &StageTarget,
) -> Result<Stage> {
    train_stage_traced(pos, neg, pool, target, Exec::default()).map(|(s, _)| s)
}

#[derive(Clone, Debug)]
pub struct CascadeTrainConfig {
    pub max_stages: usize,
    pub stage: StageTarget,
    /// Negatives requested from the miner for each stage.
    pub negatives_per_stage: usize,
    /// Stop early when the miner cannot supply at least this many negatives.
    pub min_negatives: usize,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            max_stages: 8,
            stage: StageTarget::default(),
            negatives_per_stage: 2000,
            min_negatives: 50,
        }
    }
}

/// Greedy stage-by-stage cascade training.
///
/// Before each stage `mine(model, n)` must return up to `n` negative samples
/// (integral images at the base window) that the current model accepts.
/// Training stops after `max_stages` or when mining runs dry.
pub fn train_cascade<M>(
    pos: &[IntegralImage],
    pool: &FeaturePool,
    cfg: &CascadeTrainConfig,
    exec: Exec,
    mut mine: M,
) -> Result<CascadeModel>
where
    M: FnMut(&CascadeModel, usize) -> Vec<IntegralImage>,
{
    let base = pool
        .base()
        .ok_or_else(|| CascadeError::StageTrainingFailed("empty feature pool".into()))?;
    let mut model = CascadeModel::new(pool.kind(), base, vec![])?;
    let full = base_rect(base);
    for _ in 0..cfg.max_stages {
        let neg = mine(&model, cfg.negatives_per_stage);
        if neg.len() < cfg.min_negatives {
            break;
        }
        // positives the cascade already rejects cannot be recovered later
        let live: Vec<IntegralImage> = pos
            .iter()
            .filter(|ii| super::eval_cascade_unchecked(ii, &model, &full).accepted)
            .cloned()
            .collect();
        let (stage, _) = train_stage_traced(&live, &neg, pool, &cfg.stage, exec)?;
        model.push_stage(stage)?;
    }
    Ok(model)
}
