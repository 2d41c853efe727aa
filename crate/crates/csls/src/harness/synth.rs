//! Synthetic long-tail dataset generation.
//!
//! Labeled class sizes follow a Zipf profile ((i+1)^-s, class 0 largest),
//! rounded by largest remainder with a floor of one instance per class.
//! Features are isotropic Gaussian clusters around unit-sphere class centers
//! scaled by `class_center_scale`. Centers are built in pairs: classes 2k
//! and 2k+1 share a plane and sit at cosine `pair_cosine`, so adjacent
//! frequency ranks form look-alike pairs and similarity smoothing has real
//! structure to exploit. The unlabeled pool follows the same mixture; the
//! test set is balanced.
//!
//! All draws come from child streams of `SyntheticDatasetSpec::seed` in a
//! fixed order, so equal configurations generate bitwise-equal datasets.

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::matrix::{dot, norm, Matrix};
use crate::rng::{normal_vec, Seed};

/// Held-out share of the labeled pool used for calibration statistics.
pub const VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub zipf_exponent: f64,
    pub total_labeled: usize,
    pub total_unlabeled: usize,
    pub dim: usize,
    pub cluster_spread: f64,
    pub class_center_scale: f64,
    pub rare_threshold: usize,
    pub test_per_class: usize,
    pub pair_cosine: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            zipf_exponent: 1.5,
            total_labeled: 2000,
            total_unlabeled: 4000,
            dim: 16,
            cluster_spread: 0.25,
            class_center_scale: 2.2,
            rare_threshold: 10,
            test_per_class: 100,
            pair_cosine: 0.94,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidData("num_classes must be at least 2".into()));
        }
        if self.total_labeled < self.num_classes {
            return Err(Error::InvalidData(format!(
                "total_labeled {} cannot cover {} classes",
                self.total_labeled, self.num_classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidData("dim must be at least 1".into()));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::InvalidData(
                "zipf_exponent must be a finite nonnegative real".into(),
            ));
        }
        if !self.cluster_spread.is_finite() || self.cluster_spread <= 0.0 {
            return Err(Error::InvalidData("cluster_spread must be positive".into()));
        }
        if !self.class_center_scale.is_finite() || self.class_center_scale <= 0.0 {
            return Err(Error::InvalidData(
                "class_center_scale must be positive".into(),
            ));
        }
        if self.rare_threshold == 0 {
            return Err(Error::InvalidData("rare_threshold must be at least 1".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::InvalidData("test_per_class must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.pair_cosine) {
            return Err(Error::InvalidData(
                "pair_cosine must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Features with their hard labels, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Matrix,
    pub labels: LabelSet,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Full labeled pool before any validation split.
    pub labeled: Split,
    /// Train/val partition of `labeled` at the standard 15%.
    pub train: Split,
    pub val: Split,
    pub unlabeled: Matrix,
    pub test: Split,
}

/// Zipf class sizes by largest-remainder rounding, then a floor of one
/// instance per class (taken from the largest classes).
pub fn zipf_counts(num_classes: usize, exponent: f64, total: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..num_classes)
        .map(|i| ((i + 1) as f64).powf(-exponent))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();

    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }

    // Floor of 1: feasible because total >= num_classes is validated upstream.
    for i in 0..num_classes {
        while counts[i] == 0 {
            let donor = (0..num_classes)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Unit-norm class centers with paired geometry: classes 2k and 2k+1 sit at
/// cosine `pair_cosine` when enough orthonormal directions exist
/// (ceil(C/2) < D); otherwise centers fall back to independent normalized
/// Gaussian directions.
fn class_centers(spec: &SyntheticDatasetSpec) -> Matrix {
    let (c, d) = (spec.num_classes, spec.dim);
    let mut rng = Seed(spec.seed).child(1).rng();
    let half = c.div_ceil(2);

    let mut centers = Matrix::zeros(c, d);
    let basis = if half < d { orthonormal_basis(d, &mut rng) } else { None };
    match basis {
        Some(q) => {
            for i in 0..c {
                let k = i / 2;
                let anchor = q.row(k);
                let row = centers.row_mut(i);
                if i % 2 == 0 {
                    row.copy_from_slice(anchor);
                } else {
                    // Tilt along basis rows no anchor occupies (the basis
                    // exists only when half < d), so unrelated classes stay
                    // orthogonal.
                    let tilt = q.row(half + (k % (d - half)));
                    let (a, b) = (spec.pair_cosine, (1.0 - spec.pair_cosine * spec.pair_cosine).sqrt());
                    for j in 0..d {
                        row[j] = a * anchor[j] + b * tilt[j];
                    }
                }
            }
        }
        None => {
            for i in 0..c {
                loop {
                    let v = normal_vec(&mut rng, d);
                    let n = norm(&v);
                    if n > 1e-8 {
                        let row = centers.row_mut(i);
                        for j in 0..d {
                            row[j] = v[j] / n;
                        }
                        break;
                    }
                }
            }
        }
    }
    for i in 0..c {
        for v in centers.row_mut(i) {
            *v *= spec.class_center_scale;
        }
    }
    centers
}

/// Modified Gram-Schmidt on a seeded Gaussian d x d matrix. None if a column
/// degenerates (essentially never for continuous draws).
fn orthonormal_basis(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Option<Matrix> {
    let mut q = Matrix::zeros(d, d);
    for i in 0..d {
        let mut v = normal_vec(rng, d);
        for k in 0..i {
            let proj = dot(&v, q.row(k));
            for (vj, qj) in v.iter_mut().zip(q.row(k)) {
                *vj -= proj * qj;
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            return None;
        }
        let row = q.row_mut(i);
        for j in 0..d {
            row[j] = v[j] / n;
        }
    }
    Some(q)
}

fn sample_split(
    counts: &[usize],
    centers: &Matrix,
    spread: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Split {
    let d = centers.cols();
    let total: usize = counts.iter().sum();
    let mut features = Matrix::zeros(total, d);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (class, &n) in counts.iter().enumerate() {
        let center = centers.row(class).to_vec();
        for _ in 0..n {
            let noise = normal_vec(rng, d);
            let dst = features.row_mut(row);
            for j in 0..d {
                dst[j] = center[j] + spread * noise[j];
            }
            labels.push(class);
            row += 1;
        }
    }
    let labels = LabelSet::new(labels, counts.len()).expect("labels are in range by construction");
    Split { features, labels }
}

/// Per-class 15%-style split: the last floor(frac * n_i) instances of each
/// class block go to validation, the rest to train. Rows stay class-major.
pub fn split_validation(labeled: &Split, val_fraction: f64) -> Result<(Split, Split)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidData(
            "validation fraction must lie in [0, 1)".into(),
        ));
    }
    let counts = labeled.labels.class_counts();
    let val_counts: Vec<usize> = counts
        .iter()
        .map(|&n| (n as f64 * val_fraction).floor() as usize)
        .collect();
    let take = |want_val: bool| -> Split {
        let d = labeled.features.cols();
        let mut feats = Vec::new();
        let mut labs = Vec::new();
        let mut offset = 0;
        for (class, &n) in counts.iter().enumerate() {
            let n_val = val_counts[class];
            let (lo, hi) = if want_val {
                (offset + n - n_val, offset + n)
            } else {
                (offset, offset + n - n_val)
            };
            for r in lo..hi {
                feats.extend_from_slice(labeled.features.row(r));
                labs.push(class);
            }
            offset += n;
        }
        let rows = labs.len();
        Split {
            features: Matrix::new(rows, d, feats).expect("finite slices stay finite"),
            labels: LabelSet::new(labs, counts.len()).expect("labels in range"),
        }
    };
    Ok((take(false), take(true)))
}

/// Keeps the first max(1, round(fraction * n_i)) instances of each class
/// block. fraction = 1 reproduces the input bitwise.
pub fn subsample(labeled: &Split, fraction: f64) -> Result<Split> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidData(format!(
            "label fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let counts = labeled.labels.class_counts();
    let d = labeled.features.cols();
    let mut feats = Vec::new();
    let mut labs = Vec::new();
    let mut offset = 0;
    for (class, &n) in counts.iter().enumerate() {
        let keep = ((n as f64 * fraction).round() as usize).clamp(1, n);
        for r in offset..offset + keep {
            feats.extend_from_slice(labeled.features.row(r));
            labs.push(class);
        }
        offset += n;
    }
    let rows = labs.len();
    Ok(Split {
        features: Matrix::new(rows, d, feats)?,
        labels: LabelSet::new(labs, counts.len())?,
    })
}

pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = class_centers(spec);

    let labeled_counts = zipf_counts(spec.num_classes, spec.zipf_exponent, spec.total_labeled);
    let mut rng_labeled = Seed(spec.seed).child(2).rng();
    let labeled = sample_split(&labeled_counts, &centers, spec.cluster_spread, &mut rng_labeled);

    let unlabeled = if spec.total_unlabeled > 0 {
        let counts = zipf_counts(spec.num_classes, spec.zipf_exponent, spec.total_unlabeled);
        let mut rng = Seed(spec.seed).child(3).rng();
        sample_split(&counts, &centers, spec.cluster_spread, &mut rng).features
    } else {
        Matrix::zeros(0, spec.dim)
    };

    let mut rng_test = Seed(spec.seed).child(4).rng();
    let test = sample_split(
        &vec![spec.test_per_class; spec.num_classes],
        &centers,
        spec.cluster_spread,
        &mut rng_test,
    );

    let (train, val) = split_validation(&labeled, VAL_FRACTION)?;
    Ok(Dataset { labeled, train, val, unlabeled, test })
}

/// Classes whose labeled train count is at or below the rare threshold.
pub fn rare_classes(train_labels: &LabelSet, rare_threshold: usize) -> Vec<usize> {
    train_labels
        .class_counts()
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n <= rare_threshold)
        .map(|(i, _)| i)
        .collect()
}
