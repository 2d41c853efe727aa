//! Label smoothing: uniform and class-similarity variants.
//!
//! Both operate on strictly one-hot targets and mix with weight epsilon:
//! uniform smoothing mixes toward 1/C, similarity smoothing toward the true
//! class's slice of a row-stochastic similarity matrix. The similarity slice
//! is the true-class ROW by default, which is already a distribution; the
//! `column-renormalized` orientation takes the true-class column and rescales
//! it to sum 1, for callers who want the transposed reading. The diagonal is
//! kept, so the true class ends up with (1-eps) + eps * S'_cc.

use crate::error::{Error, Result};
use crate::labels::{SoftLabels, ROW_SUM_TOL};
use crate::matrix::Matrix;
use crate::prototypes::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingMode {
    Uniform,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    Row,
    ColumnRenormalized,
}

#[derive(Debug, Clone, Copy)]
pub struct SmoothingConfig {
    epsilon: f64,
    mode: SmoothingMode,
    orientation: Orientation,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64, mode: SmoothingMode, orientation: Orientation) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { epsilon, mode, orientation })
    }

    pub fn uniform(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, SmoothingMode::Uniform, Orientation::Row)
    }

    pub fn similarity(epsilon: f64, orientation: Orientation) -> Result<Self> {
        Self::new(epsilon, SmoothingMode::Similarity, orientation)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> SmoothingMode {
        self.mode
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidData(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

fn check_one_hot(targets: &SoftLabels) -> Result<()> {
    if !targets.is_strictly_one_hot() {
        return Err(Error::InvalidData(
            "smoothing requires strictly one-hot targets".into(),
        ));
    }
    Ok(())
}

/// (1-eps) * y + eps / C per entry.
pub fn smooth_uniform(targets: &SoftLabels, epsilon: f64) -> Result<SoftLabels> {
    check_epsilon(epsilon)?;
    check_one_hot(targets)?;
    let c = targets.num_classes();
    let fill = epsilon / c as f64;
    let keep = 1.0 - epsilon;
    let data = targets
        .matrix()
        .data()
        .iter()
        .map(|&y| keep * y + fill)
        .collect();
    SoftLabels::from_matrix(Matrix::new(targets.rows(), c, data)?)
}

/// Similarity smoothing against the modulated component of `sim`.
pub fn smooth_similarity(
    targets: &SoftLabels,
    sim: &SimilarityMatrix,
    cfg: &SmoothingConfig,
) -> Result<SoftLabels> {
    let sprime = sim.modulated().ok_or_else(|| {
        Error::InvalidData("similarity matrix has no modulated component".into())
    })?;
    smooth_similarity_stochastic(targets, sprime, cfg)
}

/// Similarity smoothing against an explicit row-stochastic matrix, for
/// callers that load S' from a file rather than holding a SimilarityMatrix.
pub fn smooth_similarity_stochastic(
    targets: &SoftLabels,
    sprime: &Matrix,
    cfg: &SmoothingConfig,
) -> Result<SoftLabels> {
    check_one_hot(targets)?;
    let c = targets.num_classes();
    if sprime.rows() != c || sprime.cols() != c {
        return Err(Error::Dimension(format!(
            "targets have {c} classes but similarity matrix is {}x{}",
            sprime.rows(),
            sprime.cols()
        )));
    }
    for (i, row) in sprime.rows_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidData(format!(
                "similarity row {i} is not a distribution (sum {sum})"
            )));
        }
    }

    // Column sums, needed only for the renormalized orientation. Every
    // column of a positive row-stochastic matrix has positive sum.
    let col_sums: Vec<f64> = match cfg.orientation {
        Orientation::Row => Vec::new(),
        Orientation::ColumnRenormalized => (0..c)
            .map(|j| (0..c).map(|i| sprime.get(i, j)).sum())
            .collect(),
    };
    if cfg.orientation == Orientation::ColumnRenormalized {
        if let Some(j) = col_sums.iter().position(|&s| s <= 0.0) {
            return Err(Error::InvalidData(format!(
                "similarity column {j} has nonpositive sum; cannot renormalize"
            )));
        }
    }

    let (eps, keep) = (cfg.epsilon, 1.0 - cfg.epsilon);
    let mut out = Matrix::zeros(targets.rows(), c);
    for (n, target) in targets.matrix().rows_iter().enumerate() {
        let class = crate::matrix::argmax(target);
        let row = out.row_mut(n);
        match cfg.orientation {
            Orientation::Row => {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = eps * sprime.get(class, j);
                }
            }
            Orientation::ColumnRenormalized => {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = eps * sprime.get(j, class) / col_sums[class];
                }
            }
        }
        row[class] += keep;
    }
    SoftLabels::from_matrix(out)
}
