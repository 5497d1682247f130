//! SGD training, evaluation metrics and the two evaluation protocols
//! (stratified shuffle split and subject-grouped k-fold).

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn::{ArchConfig, CnnError, Network, Scalar, Tensor};
use crate::dataset::{grouped_kfold_subjects, split_indices, DatasetError, Label, Sample, INPUT_SIZE};
use crate::par::Exec;
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (lr {lr}); lower the learning rate")]
    Diverged { epoch: usize, batch: usize, lr: f64 },
    #[error("fold {fold}: subject `{subject}` is in both train and test")]
    Leakage { fold: usize, subject: String },
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Learning-rate factor applied from epoch ⌊2/3·epochs⌋ on.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lr: 0.01, momentum: 0.9, batch: 64, epochs: 15, lr_decay: 0.1, seed: 42 }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Hyper(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Hyper(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch == 0 {
            return Err(TrainError::Hyper("batch must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::Hyper(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= 2 * self.epochs / 3 {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Momentum update `v ← m·v − lr·g; p ← p + v`.
pub fn sgd_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], velocity: &mut [Tensor<T>], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(CnnError::Shape(format!(
            "{} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        ))
        .into());
    }
    let (lr, m) = (T::of(lr), T::of(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(CnnError::Shape(format!("param {:?}, grad {:?}, velocity {:?}", p.shape(), g.shape(), v.shape())).into());
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut().iter_mut()) {
            *vi = m * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,val_accuracy\n");
    for e in history {
        let val = e.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.6},{val}", e.epoch, e.loss);
    }
    s
}

fn labels_of(set: &[Sample]) -> Result<Vec<usize>> {
    set.iter().map(|s| s.label().map(Label::index).map_err(TrainError::from)).collect()
}

/// Minibatch SGD with momentum; fully determined by data order and
/// `h.seed`.
pub fn train(
    mut net: Network<f32>,
    train_set: &[Sample],
    h: &Hyper,
    val: Option<&[Sample]>,
    exec: Exec,
) -> Result<(Network<f32>, Vec<EpochStats>)> {
    h.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    let labels = labels_of(train_set)?;
    let mut velocity = net.zero_grads();
    let mut history = Vec::with_capacity(h.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..h.epochs {
        order.shuffle(&mut seed::rng(h.seed, &[0xe90c, epoch as u64]));
        let lr = h.lr_at(epoch);
        let mut total = 0.0f64;
        for (b, chunk) in order.chunks(h.batch).enumerate() {
            let xs: Vec<Vec<f32>> = chunk.iter().map(|&i| train_set[i].to_f32()).collect();
            let inputs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.loss_and_grads(&inputs, &ys, exec)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b, lr });
            }
            total += f64::from(loss) * chunk.len() as f64;
            sgd_step(net.params_mut(), &grads, &mut velocity, lr, h.momentum)?;
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged { epoch, batch: order.len().div_ceil(h.batch), lr });
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => Some(evaluate(&net, v, exec)?.accuracy),
            _ => None,
        };
        history.push(EpochStats { epoch, loss: total / train_set.len() as f64, lr, val_accuracy });
    }
    Ok((net, history))
}

/// Accuracy with a 3×3 confusion matrix (rows true, columns predicted).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub n: u64,
    pub confusion: [[u64; 3]; 3],
}

impl Metrics {
    pub fn from_pairs(truth: &[usize], predicted: &[usize]) -> Result<Metrics> {
        if truth.is_empty() {
            return Err(TrainError::Empty("evaluation"));
        }
        if truth.len() != predicted.len() {
            return Err(CnnError::Shape(format!("{} labels, {} predictions", truth.len(), predicted.len())).into());
        }
        let mut confusion = [[0u64; 3]; 3];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= 3 || p >= 3 {
                return Err(CnnError::Label(t.max(p), 3).into());
            }
            confusion[t][p] += 1;
        }
        Ok(Metrics::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Metrics {
        let n: u64 = confusion.iter().flatten().sum();
        let hits: u64 = (0..3).map(|i| confusion[i][i]).sum();
        let accuracy = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        Metrics { accuracy, n, confusion }
    }

    /// Three rows of three counts, rows in label order right, left, vague.
    pub fn confusion_csv(&self) -> String {
        self.confusion
            .iter()
            .map(|r| format!("{},{},{}\n", r[0], r[1], r[2]))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

/// Predicted labels, in sample order.
pub fn predict(net: &Network<f32>, set: &[Sample], exec: Exec) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.chunks(256) {
        let mut data = Vec::with_capacity(chunk.len() * INPUT_SIZE * INPUT_SIZE);
        for s in chunk {
            data.extend(s.to_f32());
        }
        let batch = Tensor::new(&[chunk.len(), 1, INPUT_SIZE, INPUT_SIZE], data)?;
        out.extend(net.predict(&batch, exec)?);
    }
    Ok(out)
}

pub fn evaluate(net: &Network<f32>, set: &[Sample], exec: Exec) -> Result<Metrics> {
    if set.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let truth = labels_of(set)?;
    Metrics::from_pairs(&truth, &predict(net, set, exec)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleReport {
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
    pub history: Vec<EpochStats>,
}

/// Train on a seeded (optionally stratified) split and evaluate on the rest.
pub fn shuffle_experiment(
    samples: &[Sample],
    arch: ArchConfig,
    test_fraction: f64,
    stratify: bool,
    h: &Hyper,
    exec: Exec,
) -> Result<(Network<f32>, ShuffleReport)> {
    let labels: Vec<Label> = samples.iter().map(Sample::label).collect::<std::result::Result<_, _>>()?;
    let split = split_indices(&labels, test_fraction, h.seed, stratify)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (tr, te) = (pick(&split.train), pick(&split.test));
    let net = Network::init(arch, h.seed)?;
    let (net, history) = train(net, &tr, h, None, exec)?;
    let metrics = evaluate(&net, &te, exec)?;
    Ok((net, ShuffleReport { train_size: tr.len(), test_size: te.len(), metrics, history }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds.
    pub std_accuracy: f64,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldResult>) -> CvReport {
        let accs: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
        let k = accs.len();
        let mean = accs.iter().sum::<f64>() / k.max(1) as f64;
        let var = if k > 1 { accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64 } else { 0.0 };
        CvReport { k, folds, mean_accuracy: mean, std_accuracy: var.sqrt() }
    }

    pub fn table(&self) -> String {
        let mut s = String::from("fold  subjects                     n_train  n_test  accuracy\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:>4}  {:<27}  {:>7}  {:>6}  {:.4}",
                f.fold,
                f.test_subjects.join(","),
                f.train_size,
                f.test_size,
                f.metrics.accuracy
            );
        }
        let _ = writeln!(s, "mean  {:<27}  {:>7}  {:>6}  {:.4} (sd {:.4})", "", "", "", self.mean_accuracy, self.std_accuracy);
        s
    }
}

/// Subject-grouped k-fold cross-validation. Fold `i` trains a fresh
/// network seeded with `h.seed ^ i`.
pub fn cross_validate(samples: &[Sample], arch: ArchConfig, k: usize, h: &Hyper, exec: Exec) -> Result<CvReport> {
    h.validate()?;
    let subjects: Vec<&str> = samples
        .iter()
        .map(|s| {
            s.subject_id
                .as_deref()
                .filter(|id| !id.is_empty())
                .ok_or_else(|| DatasetError::Sample(format!("{} has no subject", s.source_frame)))
        })
        .collect::<std::result::Result<_, _>>()?;
    let plan = grouped_kfold_subjects(&subjects, k, h.seed)?;
    let mut folds = Vec::with_capacity(k);
    for (fold, split) in plan.folds.iter().enumerate() {
        let train_subjects: HashSet<&str> = split.train.iter().map(|&i| subjects[i]).collect();
        if let Some(&i) = split.test.iter().find(|&&i| train_subjects.contains(subjects[i])) {
            return Err(TrainError::Leakage { fold, subject: subjects[i].to_string() });
        }
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let (tr, te) = (pick(&split.train), pick(&split.test));
        let fh = Hyper { seed: h.seed ^ fold as u64, ..*h };
        let net = Network::init(arch, fh.seed)?;
        let (net, _) = train(net, &tr, &fh, None, exec)?;
        let metrics = evaluate(&net, &te, exec)?;
        folds.push(FoldResult {
            fold,
            test_subjects: plan.test_subjects[fold].clone(),
            train_size: tr.len(),
            test_size: te.len(),
            metrics,
        });
    }
    Ok(CvReport::from_folds(folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_corpus;

    fn tensor(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![tensor(&[1.0, -2.0])];
        let mut v = vec![tensor(&[0.0, 0.0])];
        sgd_step(&mut p, &[tensor(&[0.5, 1.0])], &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p[0].data(), &[0.95, -2.1]);

        let mut p = vec![tensor(&[3.0])];
        let mut v = vec![tensor(&[0.0])];
        sgd_step(&mut p, &[tensor(&[0.0])], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p[0].data(), &[3.0]);

        // v1 = -lr g, p1 = p0 + v1; v2 = m v1 - lr g, p2 = p1 + v2
        let (lr, m, g, p0) = (0.01, 0.9, 2.0, 1.0);
        let v1 = -lr * g;
        let v2 = m * v1 - lr * g;
        let want = p0 + v1 + v2;
        let mut p = vec![Tensor::new(&[1], vec![p0 as f32]).unwrap()];
        let mut v = vec![Tensor::<f32>::zeros(&[1])];
        let gt = [Tensor::new(&[1], vec![g as f32]).unwrap()];
        sgd_step(&mut p, &gt, &mut v, lr, m).unwrap();
        sgd_step(&mut p, &gt, &mut v, lr, m).unwrap();
        assert!((f64::from(p[0].data()[0]) - want).abs() < 1e-7);
        assert!(sgd_step(&mut p, &[tensor(&[1.0]).cast::<f32>(), tensor(&[1.0]).cast()], &mut v, lr, m).is_err());
    }

    #[test]
    fn hyper_validation_and_decay() {
        assert!(Hyper { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(Hyper { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(Hyper { batch: 0, ..Default::default() }.validate().is_err());
        let h = Hyper::default();
        assert_eq!(h.lr_at(9), 0.01);
        assert!((h.lr_at(10) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn metrics_identities() {
        let m = Metrics::from_pairs(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion, [[1, 0, 0], [0, 1, 0], [0, 0, 2]]);
        let m = Metrics::from_pairs(&[0, 0, 1, 2, 2, 2], &[1, 0, 1, 0, 2, 1]).unwrap();
        assert_eq!(m.confusion.map(|r| r.iter().sum::<u64>()), [2, 1, 3]);
        assert!((m.accuracy - 3.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.confusion_csv(), "1,1,0\n0,1,0\n1,1,1\n");
        assert!(m.to_json().starts_with(r#"{"accuracy":0.5,"n":6,"confusion":[[1,1,0]"#));
        assert!(Metrics::from_pairs(&[], &[]).is_err());
    }

    #[test]
    fn zero_epochs_is_identity_and_training_is_deterministic() {
        let data = gen_corpus(12, 3, 1, Exec::default()).unwrap();
        let net = Network::init(ArchConfig::default(), 1).unwrap();
        let h0 = Hyper { epochs: 0, ..Default::default() };
        assert_eq!(train(net.clone(), &data, &h0, None, Exec::default()).unwrap(), (net.clone(), vec![]));
        let h = Hyper { epochs: 2, batch: 4, ..Default::default() };
        let a = train(net.clone(), &data, &h, Some(&data), Exec::Parallel).unwrap();
        let b = train(net.clone(), &data, &h, Some(&data), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 2);
        assert!(train(net, &[], &h, None, Exec::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = gen_corpus(6, 2, 2, Exec::default()).unwrap();
        let net = Network::init(ArchConfig::default(), 1).unwrap();
        let h = Hyper { lr: 1e30, epochs: 3, batch: 2, ..Default::default() };
        assert!(matches!(train(net, &data, &h, None, Exec::default()), Err(TrainError::Diverged { .. })));
    }

    #[test]
    fn overfits_twenty_samples() {
        let data = gen_corpus(20, 4, 5, Exec::default()).unwrap();
        let net = Network::init(ArchConfig::default(), 3).unwrap();
        let h = Hyper { epochs: 200, batch: 4, ..Default::default() };
        let (net, hist) = train(net, &data, &h, None, Exec::default()).unwrap();
        assert_eq!(evaluate(&net, &data, Exec::default()).unwrap().accuracy, 1.0);
        assert!(hist.last().unwrap().loss < 0.05, "{:?}", hist.last());
    }

    #[test]
    fn untrained_net_is_at_chance() {
        let data = gen_corpus(300, 10, 8, Exec::default()).unwrap();
        let accs: Vec<f64> = (0..60u64)
            .map(|s| evaluate(&Network::init(ArchConfig::default(), s).unwrap(), &data, Exec::default()).unwrap().accuracy)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 1.0 / 3.0).abs() <= 0.05, "{accs:?}");
    }

    #[test]
    fn cv_report_arithmetic() {
        let f = |fold, acc: f64| FoldResult {
            fold,
            test_subjects: vec![],
            train_size: 1,
            test_size: 1,
            metrics: Metrics { accuracy: acc, n: 1, confusion: [[0; 3]; 3] },
        };
        let r = CvReport::from_folds(vec![f(0, 0.8), f(1, 0.9), f(2, 1.0)]);
        assert!((r.mean_accuracy - 0.9).abs() < 1e-12);
        assert!((r.std_accuracy - 0.1).abs() < 1e-12);
    }

    #[test]
    fn leave_one_subject_out() {
        let data = gen_corpus(24, 4, 9, Exec::default()).unwrap();
        let h = Hyper { epochs: 1, batch: 8, ..Default::default() };
        let r = cross_validate(&data, ArchConfig::default(), 4, &h, Exec::default()).unwrap();
        assert_eq!(r.folds.len(), 4);
        assert!(r.folds.iter().all(|f| f.test_subjects.len() == 1 && f.test_size == 6));
        let mean = r.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / 4.0;
        assert_eq!(r.mean_accuracy, mean);
    }
}
