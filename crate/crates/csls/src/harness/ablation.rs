//! Runs the seven-variant ablation over labeled fractions and seeds, and
//! renders the result table as JSON and CSV.
//!
//! Per (fraction, seed) cell: one synthetic dataset is generated, the labeled
//! pool is subsampled to the fraction and re-split into train/validation, and
//! each requested variant trains on that budget. The teacher for the
//! semi-supervised variants is the supervised-similarity-smooth+gamma model;
//! its correction vector is estimated on the validation split.

use crate::calibration::{ccece, reliability_bins, BinningConfig, Grouping};
use crate::error::{Error, Result};
use crate::harness::model::{
    evaluate, train_semisupervised, train_supervised, LinearClassifier, Metrics, PseudoPolicy,
    PseudoVariant, TrainConfig,
};
use crate::harness::synth::{
    generate_synthetic, rare_classes, split_validation, subsample, SyntheticDatasetSpec,
    VAL_FRACTION,
};
use crate::jsonfmt::Json;
use crate::labels::SoftLabels;
use crate::prototypes::{compute_prototypes, cosine_similarity, modulate_similarity};
use crate::smoothing::{smooth_similarity, smooth_uniform, Orientation, SmoothingConfig};

/// The compared label-construction strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SupervisedOneHot,
    SupervisedUniformSmooth,
    SupervisedSimilaritySmooth,
    SupervisedSimilaritySmoothGamma,
    SemisupOneHot,
    SemisupSoft,
    SemisupSoftCorrection,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SupervisedOneHot,
        Variant::SupervisedUniformSmooth,
        Variant::SupervisedSimilaritySmooth,
        Variant::SupervisedSimilaritySmoothGamma,
        Variant::SemisupOneHot,
        Variant::SemisupSoft,
        Variant::SemisupSoftCorrection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SupervisedOneHot => "supervised-onehot",
            Variant::SupervisedUniformSmooth => "supervised-uniform-smooth",
            Variant::SupervisedSimilaritySmooth => "supervised-similarity-smooth",
            Variant::SupervisedSimilaritySmoothGamma => "supervised-similarity-smooth+gamma",
            Variant::SemisupOneHot => "semisup-onehot",
            Variant::SemisupSoft => "semisup-soft",
            Variant::SemisupSoftCorrection => "semisup-soft+correction",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    fn is_semisup(self) -> bool {
        matches!(
            self,
            Variant::SemisupOneHot | Variant::SemisupSoft | Variant::SemisupSoftCorrection
        )
    }
}

/// Full ablation configuration: data spec, trainer, method hyperparameters,
/// and the grid of fractions, seeds, and variants to sweep.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub spec: SyntheticDatasetSpec,
    pub train: TrainConfig,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    pub num_bins: usize,
    pub label_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Re-estimate Δ from the evolving teacher every epoch instead of once
    /// from the pretrained teacher.
    pub recompute_delta: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = SyntheticDatasetSpec::default();
        let train = TrainConfig::defaults_for(&spec);
        Self {
            spec,
            train,
            epsilon: 0.1,
            gamma: 1.5,
            lambda: 2.0,
            tau: 0.5,
            num_bins: 10,
            label_fractions: vec![0.05, 0.25, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ALL.to_vec(),
            recompute_delta: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()?;
        for (name, v, lo, hi) in [
            ("epsilon", self.epsilon, 0.0, 1.0),
            ("tau", self.tau, 0.0, 1.0),
        ] {
            if !v.is_finite() || !(lo..=hi).contains(&v) {
                return Err(Error::InvalidParam(format!(
                    "{name} must lie in [{lo}, {hi}], got {v}"
                )));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.num_bins == 0 {
            return Err(Error::InvalidParam("num_bins must be at least 1".into()));
        }
        if self.label_fractions.is_empty() {
            return Err(Error::InvalidParam("label_fractions must not be empty".into()));
        }
        for &f in &self.label_fractions {
            if !f.is_finite() || f <= 0.0 || f > 1.0 {
                return Err(Error::InvalidParam(format!(
                    "label fractions must lie in (0, 1], got {f}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParam("seeds must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidParam("variants must not be empty".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::InvalidParam(format!(
                    "variant {} listed twice",
                    v.name()
                )));
            }
        }
        Ok(())
    }

    fn wants(&self, v: Variant) -> bool {
        self.variants.contains(&v)
    }
}

/// One (variant, fraction, seed) evaluation. `metrics.ece` is the student's
/// test ECE; `ece_teacher` is the pretrained teacher's (for supervised
/// variants the model is its own teacher).
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub variant: Variant,
    pub label_fraction: f64,
    pub seed: u64,
    pub ece_teacher: f64,
    pub metrics: Metrics,
}

/// Seed-aggregated view of one (variant, fraction) cell: mean and sample
/// standard deviation over seeds.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub variant: Variant,
    pub label_fraction: f64,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_rare_accuracy: Option<f64>,
    pub std_rare_accuracy: Option<f64>,
    pub mean_ece_teacher: f64,
    pub mean_ece_student: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Trains and evaluates every requested variant at each labeled fraction and
/// seed. Rows come out fraction-major, then seed, then canonical variant
/// order; runs are deterministic for a fixed config.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &fraction in &cfg.label_fractions {
        for &seed in &cfg.seeds {
            run_cell(cfg, fraction, seed, &mut rows)?;
        }
    }
    let summary = summarize(cfg, &rows);
    Ok(ExperimentResult {
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    fraction: f64,
    seed: u64,
    rows: &mut Vec<ResultRow>,
) -> Result<()> {
    let mut spec = cfg.spec.clone();
    spec.seed = seed;
    let data = generate_synthetic(&spec)?;

    // The annotation budget: subsample the labeled pool first, then carve the
    // validation split out of what remains.
    let pool = subsample(&data.labeled, fraction)?;
    let (train, val) = split_validation(&pool, VAL_FRACTION)?;
    let rare = rare_classes(&train.labels, spec.rare_threshold);
    let bins = BinningConfig::new(cfg.num_bins)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;

    // Label constructions for the supervised variants.
    let onehot = train.labels.one_hot();
    let uniform = smooth_uniform(&onehot, cfg.epsilon)?;
    let protos = compute_prototypes(&train.features, &train.labels)?;
    let sim = cosine_similarity(&protos)?;
    let smooth_cfg = SmoothingConfig::similarity(cfg.epsilon, Orientation::Row)?;
    let sim_flat = modulate_similarity(&sim, protos.counts(), 0.0)?;
    let sim_gamma = modulate_similarity(&sim, protos.counts(), cfg.gamma)?;
    let smoothed_flat = smooth_similarity(&onehot, &sim_flat, &smooth_cfg)?;
    let smoothed_gamma = smooth_similarity(&onehot, &sim_gamma, &smooth_cfg)?;

    let any_semisup = Variant::ALL
        .into_iter()
        .any(|v| v.is_semisup() && cfg.wants(v));

    let supervised: [(Variant, &SoftLabels); 4] = [
        (Variant::SupervisedOneHot, &onehot),
        (Variant::SupervisedUniformSmooth, &uniform),
        (Variant::SupervisedSimilaritySmooth, &smoothed_flat),
        (Variant::SupervisedSimilaritySmoothGamma, &smoothed_gamma),
    ];
    let mut teacher: Option<LinearClassifier> = None;
    for (variant, targets) in supervised {
        let trains_teacher = variant == Variant::SupervisedSimilaritySmoothGamma && any_semisup;
        if !cfg.wants(variant) && !trains_teacher {
            continue;
        }
        let out = train_supervised(&train.features, targets, &tcfg)?;
        if trains_teacher {
            teacher = Some(out.model.clone());
        }
        if cfg.wants(variant) {
            let metrics = evaluate(&out.model, &data.test, &rare, &bins)?;
            rows.push(ResultRow {
                variant,
                label_fraction: fraction,
                seed,
                ece_teacher: metrics.ece,
                metrics,
            });
        }
    }

    if !any_semisup {
        return Ok(());
    }
    let teacher = teacher.expect("teacher trained above whenever a semisup variant runs");
    let teacher_ece = evaluate(&teacher, &data.test, &rare, &bins)?.ece;

    // Δ comes from the pretrained teacher on the held-out validation split.
    let val_scores = teacher.softmax_forward(&val.features)?;
    let report = reliability_bins(&val_scores, &val.labels, &bins, Grouping::PredictedClass)?;
    let delta = ccece(&report);

    for (variant, pseudo) in [
        (Variant::SemisupOneHot, PseudoVariant::OneHot),
        (Variant::SemisupSoft, PseudoVariant::Soft),
        (Variant::SemisupSoftCorrection, PseudoVariant::SoftCorrected),
    ] {
        if !cfg.wants(variant) {
            continue;
        }
        let mut policy = PseudoPolicy::new(pseudo, cfg.tau);
        policy.lambda = cfg.lambda;
        policy.num_bins = cfg.num_bins;
        if pseudo == PseudoVariant::SoftCorrected {
            if cfg.recompute_delta {
                policy.recompute_delta_on = Some(&val);
            } else {
                policy.delta = Some(delta.clone());
            }
        }
        // All semisup variants share the same supervised targets; they differ
        // only in how pseudo-labels are formed.
        let out = train_semisupervised(
            &train.features,
            &smoothed_gamma,
            &data.unlabeled,
            &teacher,
            &policy,
            &tcfg,
        )?;
        let metrics = evaluate(&out.student, &data.test, &rare, &bins)?;
        rows.push(ResultRow {
            variant,
            label_fraction: fraction,
            seed,
            ece_teacher: teacher_ece,
            metrics,
        });
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn summarize(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &fraction in &cfg.label_fractions {
        for variant in Variant::ALL {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.label_fraction == fraction)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let accs: Vec<f64> = cell.iter().map(|r| r.metrics.accuracy).collect();
            let rares: Vec<f64> = cell
                .iter()
                .filter_map(|r| r.metrics.rare_accuracy)
                .collect();
            let mean_acc = mean(&accs);
            let (mean_rare, std_rare) = if rares.is_empty() {
                (None, None)
            } else {
                let m = mean(&rares);
                (Some(m), Some(sample_std(&rares, m)))
            };
            out.push(SummaryRow {
                variant,
                label_fraction: fraction,
                seeds: cell.len(),
                mean_accuracy: mean_acc,
                std_accuracy: sample_std(&accs, mean_acc),
                mean_rare_accuracy: mean_rare,
                std_rare_accuracy: std_rare,
                mean_ece_teacher: mean(&cell.iter().map(|r| r.ece_teacher).collect::<Vec<_>>()),
                mean_ece_student: mean(&cell.iter().map(|r| r.metrics.ece).collect::<Vec<_>>()),
            });
        }
    }
    out
}

fn opt_float(v: Option<f64>) -> Json {
    v.map_or(Json::Null, Json::Float)
}

impl ExperimentResult {
    /// Renders `{"spec", "config", "results", "summary"}` deterministically.
    pub fn to_json(&self) -> String {
        let spec = &self.config.spec;
        let spec_json = Json::obj(vec![
            ("num_classes", Json::UInt(spec.num_classes as u64)),
            ("zipf_exponent", Json::Float(spec.zipf_exponent)),
            ("total_labeled", Json::UInt(spec.total_labeled as u64)),
            ("total_unlabeled", Json::UInt(spec.total_unlabeled as u64)),
            ("dim", Json::UInt(spec.dim as u64)),
            ("cluster_spread", Json::Float(spec.cluster_spread)),
            ("class_center_scale", Json::Float(spec.class_center_scale)),
            ("rare_threshold", Json::UInt(spec.rare_threshold as u64)),
            ("test_per_class", Json::UInt(spec.test_per_class as u64)),
            ("pair_cosine", Json::Float(spec.pair_cosine)),
            ("seed", Json::UInt(spec.seed)),
        ]);
        let cfg = &self.config;
        let train = &cfg.train;
        let config_json = Json::obj(vec![
            ("epsilon", Json::Float(cfg.epsilon)),
            ("gamma", Json::Float(cfg.gamma)),
            ("lambda", Json::Float(cfg.lambda)),
            ("tau", Json::Float(cfg.tau)),
            ("num_bins", Json::UInt(cfg.num_bins as u64)),
            ("label_fractions", Json::floats(&cfg.label_fractions)),
            (
                "seeds",
                Json::Arr(cfg.seeds.iter().map(|&s| Json::UInt(s)).collect()),
            ),
            (
                "variants",
                Json::Arr(
                    cfg.variants
                        .iter()
                        .map(|v| Json::Str(v.name().into()))
                        .collect(),
                ),
            ),
            ("recompute_delta", Json::Bool(cfg.recompute_delta)),
            ("learning_rate", Json::Float(train.learning_rate)),
            ("epochs", Json::UInt(train.epochs as u64)),
            ("l2_weight", Json::Float(train.l2_weight)),
            ("unsup_loss_weight", Json::Float(train.unsup_loss_weight)),
            ("ema_decay", Json::Float(train.ema_decay)),
            ("weak_noise_sigma", Json::Float(train.weak_noise_sigma)),
            ("strong_noise_sigma", Json::Float(train.strong_noise_sigma)),
            ("cosine_lr_decay", Json::Bool(train.cosine_lr_decay)),
        ]);
        let results = Json::Arr(
            self.rows
                .iter()
                .map(|r| {
                    Json::obj(vec![
                        ("variant", Json::Str(r.variant.name().into())),
                        ("label_fraction", Json::Float(r.label_fraction)),
                        ("seed", Json::UInt(r.seed)),
                        ("accuracy", Json::Float(r.metrics.accuracy)),
                        ("rare_accuracy", opt_float(r.metrics.rare_accuracy)),
                        ("ece_teacher", Json::Float(r.ece_teacher)),
                        ("ece_student", Json::Float(r.metrics.ece)),
                        (
                            "per_class_accuracy",
                            Json::floats(&r.metrics.per_class_accuracy),
                        ),
                    ])
                })
                .collect(),
        );
        let summary = Json::Arr(
            self.summary
                .iter()
                .map(|s| {
                    Json::obj(vec![
                        ("variant", Json::Str(s.variant.name().into())),
                        ("label_fraction", Json::Float(s.label_fraction)),
                        ("seeds", Json::UInt(s.seeds as u64)),
                        ("mean_accuracy", Json::Float(s.mean_accuracy)),
                        ("std_accuracy", Json::Float(s.std_accuracy)),
                        ("mean_rare_accuracy", opt_float(s.mean_rare_accuracy)),
                        ("std_rare_accuracy", opt_float(s.std_rare_accuracy)),
                        ("mean_ece_teacher", Json::Float(s.mean_ece_teacher)),
                        ("mean_ece_student", Json::Float(s.mean_ece_student)),
                    ])
                })
                .collect(),
        );
        Json::obj(vec![
            ("spec", spec_json),
            ("config", config_json),
            ("results", results),
            ("summary", summary),
        ])
        .render()
    }

    /// Flat per-row CSV for plotting; an absent rare accuracy is an empty
    /// field.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("variant,label_fraction,seed,accuracy,rare_accuracy,ece_teacher,ece_student\n");
        for r in &self.rows {
            let rare = r
                .metrics
                .rare_accuracy
                .map_or(String::new(), |v| format!("{v:.16e}"));
            s.push_str(&format!(
                "{},{:.16e},{},{:.16e},{},{:.16e},{:.16e}\n",
                r.variant.name(),
                r.label_fraction,
                r.seed,
                r.metrics.accuracy,
                rare,
                r.ece_teacher,
                r.metrics.ece
            ));
        }
        s
    }
}
