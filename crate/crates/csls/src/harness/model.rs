//! Linear softmax classifier plus the supervised and semi-supervised
//! (teacher-student distillation) training loops used by the simulator.
//!
//! Training is full-batch gradient descent so that runs are bitwise
//! deterministic for a given seed. Augmentation is additive Gaussian noise:
//! weak noise on teacher inputs, strong noise on student inputs.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use crate::calibration::{ccece, ece, reliability_bins, BinningConfig, Grouping};
use crate::error::{Error, Result};
use crate::harness::synth::{Split, SyntheticDatasetSpec};
use crate::labels::{LabelSet, SoftLabels};
use crate::matrix::{dot, Matrix};
use crate::pseudo::{correct_pseudo_labels, CorrectionConfig, Repair};
use crate::rng::{normal_vec, Seed};

/// Linear classifier with per-class weight rows: scores = softmax(xWᵀ + b).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearClassifier {
    /// Zero-initialized classifier; predicts the uniform distribution.
    pub fn new(num_classes: usize, dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidData(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            weights: Matrix::zeros(num_classes, dim),
            bias: vec![0.0; num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "classifier expects dimension {} but features have {}",
                self.dim(),
                x.cols()
            )));
        }
        let c = self.num_classes();
        let mut data = Vec::with_capacity(x.rows() * c);
        for xrow in x.rows_iter() {
            for i in 0..c {
                data.push(dot(self.weights.row(i), xrow) + self.bias[i]);
            }
        }
        Ok(Matrix::raw(x.rows(), c, data))
    }

    /// Row-softmax of xWᵀ + b, stabilized by row-max subtraction.
    pub fn softmax_forward(&self, x: &Matrix) -> Result<SoftLabels> {
        softmax_rows(&self.logits(x)?)
    }
}

/// Row-wise numerically stabilized softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Result<SoftLabels> {
    let mut data = Vec::with_capacity(logits.rows() * logits.cols());
    for row in logits.rows_iter() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        let start = data.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            data.push(e);
        }
        if !sum.is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        for v in &mut data[start..] {
            *v /= sum;
        }
    }
    SoftLabels::from_matrix(Matrix::raw(logits.rows(), logits.cols(), data))
}

/// Mean over rows of −Σ_c target·ln(pred), with pred floored at 1e-12.
pub fn cross_entropy_soft(pred: &SoftLabels, target: &SoftLabels) -> Result<f64> {
    check_shapes(pred, target)?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::InvalidData("cross-entropy over zero rows".into()));
    }
    let mut total = 0.0;
    for (prow, trow) in pred.matrix().rows_iter().zip(target.matrix().rows_iter()) {
        for (&p, &t) in prow.iter().zip(trow) {
            if t != 0.0 {
                total -= t * p.max(1e-12).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Gradient of `cross_entropy_soft` with respect to the logits: (pred − target)/N.
pub fn ce_logit_gradient(pred: &SoftLabels, target: &SoftLabels) -> Result<Matrix> {
    check_shapes(pred, target)?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::InvalidData("gradient over zero rows".into()));
    }
    let scale = 1.0 / n as f64;
    let data = pred
        .matrix()
        .data()
        .iter()
        .zip(target.matrix().data())
        .map(|(&p, &t)| (p - t) * scale)
        .collect();
    Ok(Matrix::raw(n, pred.num_classes(), data))
}

fn check_shapes(pred: &SoftLabels, target: &SoftLabels) -> Result<()> {
    if pred.rows() != target.rows() || pred.num_classes() != target.num_classes() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.rows(),
            pred.num_classes(),
            target.rows(),
            target.num_classes()
        )));
    }
    Ok(())
}

/// Hyperparameters shared by both training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_weight: f64,
    pub unsup_loss_weight: f64,
    /// Per-epoch EMA decay for the teacher; 0 disables the update entirely.
    pub ema_decay: f64,
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub cosine_lr_decay: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults tied to a dataset spec: noise scales follow the cluster spread
    /// (weak 5%, strong 30%).
    pub fn defaults_for(spec: &SyntheticDatasetSpec) -> Self {
        Self {
            learning_rate: 3.0,
            epochs: 190,
            l2_weight: 1e-4,
            unsup_loss_weight: 1.0,
            ema_decay: 0.999,
            weak_noise_sigma: 0.05 * spec.cluster_spread,
            strong_noise_sigma: 0.3 * spec.cluster_spread,
            cosine_lr_decay: false,
            seed: spec.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.l2_weight.is_finite() || self.l2_weight < 0.0 {
            return Err(Error::InvalidParam(format!(
                "l2_weight must be non-negative, got {}",
                self.l2_weight
            )));
        }
        if !self.unsup_loss_weight.is_finite() || self.unsup_loss_weight < 0.0 {
            return Err(Error::InvalidParam(format!(
                "unsup_loss_weight must be non-negative, got {}",
                self.unsup_loss_weight
            )));
        }
        if !self.ema_decay.is_finite() || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidParam(format!(
                "ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        for (name, v) in [
            ("weak_noise_sigma", self.weak_noise_sigma),
            ("strong_noise_sigma", self.strong_noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine_lr_decay && self.epochs > 0 {
            self.learning_rate * 0.5 * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
        } else {
            self.learning_rate
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::defaults_for(&SyntheticDatasetSpec::default())
    }
}

/// Result of supervised training: the fitted model and the per-epoch loss
/// (cross-entropy plus L2 penalty, recorded before each step).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearClassifier,
    pub loss_curve: Vec<f64>,
}

/// Full-batch gradient descent on soft-target cross-entropy with L2 weight
/// decay. Deterministic; consumes no randomness.
pub fn train_supervised(x: &Matrix, targets: &SoftLabels, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if x.rows() != targets.rows() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} target rows",
            x.rows(),
            targets.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidData("training set is empty".into()));
    }
    let mut model = LinearClassifier::new(targets.num_classes(), x.cols())?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pred = with_epoch(epoch, model.softmax_forward(x))?;
        let ce = cross_entropy_soft(&pred, targets)?;
        let loss = ce + 0.5 * cfg.l2_weight * squared_norm(&model.weights);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: non-finite loss")));
        }
        loss_curve.push(loss);
        let g = ce_logit_gradient(&pred, targets)?;
        let mut dw = Matrix::zeros(model.num_classes(), model.dim());
        let mut db = vec![0.0; model.num_classes()];
        accumulate_logit_grad(x, &g, 1.0, &mut dw, &mut db);
        gradient_step(&mut model, &dw, &db, cfg.lr_at(epoch), cfg.l2_weight);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// How pseudo-labels are formed from teacher scores each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoVariant {
    /// Argmax of the teacher scores as a one-hot target.
    OneHot,
    /// The raw teacher distribution.
    Soft,
    /// Teacher distribution shifted by λ·Δ, then clamp-renormalized.
    SoftCorrected,
}

/// Pseudo-labeling policy for the distillation loop. For `SoftCorrected`,
/// either a fixed `delta` vector or a split to re-estimate it on each epoch
/// must be supplied; re-estimation takes precedence.
#[derive(Debug, Clone)]
pub struct PseudoPolicy<'a> {
    pub variant: PseudoVariant,
    /// Confidence threshold applied to the teacher's max score, inclusive.
    pub tau: f64,
    pub lambda: f64,
    pub delta: Option<Vec<f64>>,
    pub recompute_delta_on: Option<&'a Split>,
    pub num_bins: usize,
}

impl<'a> PseudoPolicy<'a> {
    pub fn new(variant: PseudoVariant, tau: f64) -> Self {
        Self {
            variant,
            tau,
            lambda: 2.0,
            delta: None,
            recompute_delta_on: None,
            num_bins: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParam(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParam(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.num_bins == 0 {
            return Err(Error::InvalidParam("num_bins must be at least 1".into()));
        }
        if self.variant == PseudoVariant::SoftCorrected
            && self.delta.is_none()
            && self.recompute_delta_on.is_none()
        {
            return Err(Error::InvalidParam(
                "soft+correction needs a delta vector or a split to estimate it on".into(),
            ));
        }
        Ok(())
    }
}

/// Result of the distillation loop: final student, final (EMA) teacher, the
/// per-epoch training loss, and the per-epoch count of pseudo-labels kept.
#[derive(Debug, Clone)]
pub struct SemiSupOutcome {
    pub student: LinearClassifier,
    pub teacher: LinearClassifier,
    pub loss_curve: Vec<f64>,
    pub kept_counts: Vec<usize>,
}

/// Teacher-student distillation. Each epoch: the teacher scores the weakly
/// noised unlabeled pool, pseudo-labels are formed per the policy and
/// filtered at τ on teacher confidence, the student takes one full-batch step
/// on supervised loss + unsup_loss_weight × pseudo loss over strongly noised
/// kept rows, and the teacher receives an EMA update when ema_decay > 0.
///
/// Noise is drawn for every pool row each epoch whether or not it is kept, so
/// the random stream does not depend on τ or on the policy.
pub fn train_semisupervised(
    labeled: &Matrix,
    labeled_targets: &SoftLabels,
    unlabeled: &Matrix,
    teacher: &LinearClassifier,
    policy: &PseudoPolicy,
    cfg: &TrainConfig,
) -> Result<SemiSupOutcome> {
    cfg.validate()?;
    policy.validate()?;
    if labeled.rows() != labeled_targets.rows() {
        return Err(Error::Dimension(format!(
            "{} labeled rows but {} target rows",
            labeled.rows(),
            labeled_targets.rows()
        )));
    }
    if labeled.rows() == 0 {
        return Err(Error::InvalidData("labeled set is empty".into()));
    }
    if unlabeled.cols() != labeled.cols() {
        return Err(Error::Dimension(format!(
            "labeled dimension {} but unlabeled dimension {}",
            labeled.cols(),
            unlabeled.cols()
        )));
    }
    let c = labeled_targets.num_classes();
    if teacher.num_classes() != c || teacher.dim() != labeled.cols() {
        return Err(Error::Dimension(format!(
            "teacher is {}x{} but data needs {}x{}",
            teacher.num_classes(),
            teacher.dim(),
            c,
            labeled.cols()
        )));
    }

    let m = unlabeled.rows();
    let mut student = LinearClassifier::new(c, labeled.cols())?;
    let mut ema_teacher = teacher.clone();
    let mut rng = Seed(cfg.seed).rng();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut kept_counts = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let sup_pred = with_epoch(epoch, student.softmax_forward(labeled))?;
        let sup_ce = cross_entropy_soft(&sup_pred, labeled_targets)?;
        let sup_g = ce_logit_gradient(&sup_pred, labeled_targets)?;
        let mut dw = Matrix::zeros(c, student.dim());
        let mut db = vec![0.0; c];
        accumulate_logit_grad(labeled, &sup_g, 1.0, &mut dw, &mut db);

        let mut unsup_ce = 0.0;
        let mut kept = 0usize;
        if m > 0 {
            let weak = perturb(unlabeled, cfg.weak_noise_sigma, &mut rng)?;
            let teacher_scores = with_epoch(epoch, ema_teacher.softmax_forward(&weak))?;
            let targets = pseudo_targets(&teacher_scores, &ema_teacher, policy)?;
            // Confidence gating runs after correction, so corrected rows are
            // kept by their own maxima; one-hot still gates on the teacher's
            // max score (its targets are saturated at 1).
            let gate: Vec<f64> = match policy.variant {
                PseudoVariant::SoftCorrected => (0..targets.rows())
                    .map(|i| targets.row(i).iter().cloned().fold(0.0, f64::max))
                    .collect(),
                _ => teacher_scores.confidences(),
            };
            let kept_idx: Vec<usize> = gate
                .iter()
                .enumerate()
                .filter(|&(_, conf)| *conf >= policy.tau)
                .map(|(i, _)| i)
                .collect();
            let strong = perturb(unlabeled, cfg.strong_noise_sigma, &mut rng)?;
            kept = kept_idx.len();
            if kept > 0 {
                let xs = take_rows(&strong, &kept_idx);
                let ts = SoftLabels::from_matrix(take_rows(&targets, &kept_idx))?;
                let us_pred = with_epoch(epoch, student.softmax_forward(&xs))?;
                unsup_ce = cross_entropy_soft(&us_pred, &ts)?;
                let us_g = ce_logit_gradient(&us_pred, &ts)?;
                accumulate_logit_grad(&xs, &us_g, cfg.unsup_loss_weight, &mut dw, &mut db);
            }
        }

        let loss = sup_ce
            + cfg.unsup_loss_weight * unsup_ce
            + 0.5 * cfg.l2_weight * squared_norm(&student.weights);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: non-finite loss")));
        }
        loss_curve.push(loss);
        kept_counts.push(kept);

        gradient_step(&mut student, &dw, &db, cfg.lr_at(epoch), cfg.l2_weight);
        ema_update(&mut ema_teacher, &student, cfg.ema_decay);
    }

    Ok(SemiSupOutcome {
        student,
        teacher: ema_teacher,
        loss_curve,
        kept_counts,
    })
}

fn pseudo_targets(
    teacher_scores: &SoftLabels,
    ema_teacher: &LinearClassifier,
    policy: &PseudoPolicy,
) -> Result<Matrix> {
    match policy.variant {
        PseudoVariant::OneHot => {
            let mut m = Matrix::zeros(teacher_scores.rows(), teacher_scores.num_classes());
            for (n, p) in teacher_scores.predictions().into_iter().enumerate() {
                m.set(n, p, 1.0);
            }
            Ok(m)
        }
        PseudoVariant::Soft => Ok(teacher_scores.matrix().clone()),
        PseudoVariant::SoftCorrected => {
            let delta = match policy.recompute_delta_on {
                Some(split) => {
                    let scores = ema_teacher.softmax_forward(&split.features)?;
                    let bins = BinningConfig::new(policy.num_bins)?;
                    let report =
                        reliability_bins(&scores, &split.labels, &bins, Grouping::PredictedClass)?;
                    ccece(&report)
                }
                None => policy.delta.clone().ok_or_else(|| {
                    Error::InvalidParam(
                        "soft+correction needs a delta vector or a split to estimate it on".into(),
                    )
                })?,
            };
            let cfg = CorrectionConfig::new(policy.lambda, Repair::ClampRenormalize)?;
            let (scores, _fallback) = correct_pseudo_labels(teacher_scores, &delta, &cfg)?
                .into_repaired()
                .expect("clamp-renormalize always yields repaired scores");
            Ok(scores.into_matrix())
        }
    }
}

/// x plus sigma-scaled standard normal noise. Draws for every entry even when
/// sigma is 0 so the stream layout is independent of the noise scales.
fn perturb(x: &Matrix, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let noise = normal_vec(rng, x.data().len());
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(noise)
        .map(|(&v, z)| v + sigma * z)
        .collect();
    Matrix::new(x.rows(), x.cols(), data)
}

fn take_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::raw(idx.len(), m.cols(), data)
}

/// dw[c] += weight·Σ_n g[n][c]·x[n]; db[c] += weight·Σ_n g[n][c].
fn accumulate_logit_grad(x: &Matrix, g: &Matrix, weight: f64, dw: &mut Matrix, db: &mut [f64]) {
    for (n, grow) in g.rows_iter().enumerate() {
        let xrow = x.row(n);
        for (c, &gv) in grow.iter().enumerate() {
            let gv = gv * weight;
            if gv == 0.0 {
                continue;
            }
            db[c] += gv;
            for (wd, &xd) in dw.row_mut(c).iter_mut().zip(xrow) {
                *wd += gv * xd;
            }
        }
    }
}

fn gradient_step(model: &mut LinearClassifier, dw: &Matrix, db: &[f64], lr: f64, l2: f64) {
    for r in 0..model.weights.rows() {
        let wrow = model.weights.row_mut(r);
        for (w, &d) in wrow.iter_mut().zip(dw.row(r)) {
            *w -= lr * (d + l2 * *w);
        }
        model.bias[r] -= lr * db[r];
    }
}

fn ema_update(teacher: &mut LinearClassifier, student: &LinearClassifier, decay: f64) {
    if decay == 0.0 {
        return;
    }
    for r in 0..teacher.weights.rows() {
        let trow = teacher.weights.row_mut(r);
        for (t, &s) in trow.iter_mut().zip(student.weights.row(r)) {
            *t = decay * *t + (1.0 - decay) * s;
        }
        teacher.bias[r] = decay * teacher.bias[r] + (1.0 - decay) * student.bias[r];
    }
}

fn squared_norm(m: &Matrix) -> f64 {
    m.data().iter().map(|w| w * w).sum()
}

fn with_epoch<T>(epoch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
        other => other,
    })
}

/// Evaluation record for one classifier on a test split.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub accuracy: f64,
    /// Per-class accuracy; classes absent from the test set report 0.
    pub per_class_accuracy: Vec<f64>,
    /// Mean accuracy over the rare classes; absent when no rare class exists
    /// or none appears in the test set.
    pub rare_accuracy: Option<f64>,
    pub ece: f64,
}

/// Scores a classifier on a test split and summarizes accuracy, per-class and
/// rare-class accuracy, and ECE.
pub fn evaluate(
    clf: &LinearClassifier,
    test: &Split,
    rare: &[usize],
    bins: &BinningConfig,
) -> Result<Metrics> {
    let scores = clf.softmax_forward(&test.features)?;
    metrics_from_scores(&scores, &test.labels, rare, bins)
}

/// Metrics from precomputed scores; kept separate from `evaluate` so score
/// matrices from any source can be summarized.
pub fn metrics_from_scores(
    scores: &SoftLabels,
    labels: &LabelSet,
    rare: &[usize],
    bins: &BinningConfig,
) -> Result<Metrics> {
    if scores.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} score rows but {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    if scores.num_classes() != labels.num_classes() {
        return Err(Error::Dimension(format!(
            "scores have {} classes but labels have {}",
            scores.num_classes(),
            labels.num_classes()
        )));
    }
    if scores.rows() == 0 {
        return Err(Error::InvalidData("evaluation set is empty".into()));
    }
    let c = scores.num_classes();
    for &r in rare {
        if r >= c {
            return Err(Error::InvalidData(format!(
                "rare class {r} out of range for {c} classes"
            )));
        }
    }

    let preds = scores.predictions();
    let mut counts = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for (&pred, &truth) in preds.iter().zip(labels.labels()) {
        counts[truth] += 1;
        if pred == truth {
            correct[truth] += 1;
        }
    }
    let accuracy = correct.iter().sum::<usize>() as f64 / labels.len() as f64;
    let per_class_accuracy: Vec<f64> = counts
        .iter()
        .zip(&correct)
        .map(|(&n, &k)| if n > 0 { k as f64 / n as f64 } else { 0.0 })
        .collect();

    let mut seen = vec![false; c];
    let mut rare_sum = 0.0;
    let mut rare_n = 0usize;
    for &r in rare {
        if seen[r] || counts[r] == 0 {
            continue;
        }
        seen[r] = true;
        rare_sum += per_class_accuracy[r];
        rare_n += 1;
    }
    let rare_accuracy = (rare_n > 0).then(|| rare_sum / rare_n as f64);

    Ok(Metrics {
        accuracy,
        per_class_accuracy,
        rare_accuracy,
        ece: ece(scores, labels, bins)?,
    })
}
