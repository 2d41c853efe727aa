//! Hard and soft label containers.
//!
//! `LabelSet` holds integer class labels validated against a fixed class
//! count. `SoftLabels` wraps a matrix whose rows are distributions over
//! classes: entries in [0, 1] and each row summing to 1 within 1e-9. Both are
//! constructed through validating entry points so downstream code can rely on
//! the invariants without rechecking.

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelSet {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidData("num_classes must be at least 1".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidData(format!(
                "label {l} at position {i} is out of range for {num_classes} classes"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    /// Class count inferred as max(label) + 1.
    pub fn infer(labels: Vec<usize>) -> Result<Self> {
        match labels.iter().max() {
            Some(&m) => Self::new(labels, m + 1),
            None => Err(Error::InvalidData(
                "cannot infer class count from an empty label set".into(),
            )),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn one_hot(&self) -> SoftLabels {
        let mut m = Matrix::zeros(self.labels.len(), self.num_classes);
        for (n, &l) in self.labels.iter().enumerate() {
            m.set(n, l, 1.0);
        }
        SoftLabels { matrix: m }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    matrix: Matrix,
}

impl SoftLabels {
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        for (n, row) in matrix.rows_iter().enumerate() {
            let mut sum = 0.0;
            for (i, &v) in row.iter().enumerate() {
                if !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(&v) {
                    return Err(Error::InvalidData(format!(
                        "soft label entry {v} at row {n}, class {i} is outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidData(format!(
                    "soft label row {n} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.matrix.row(n)
    }

    /// Argmax class per row, ties resolved to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        self.matrix.rows_iter().map(argmax).collect()
    }

    /// Max probability per row.
    pub fn confidences(&self) -> Vec<f64> {
        self.matrix
            .rows_iter()
            .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// True only when every row is exactly one 1.0 and zeros elsewhere.
    pub fn is_strictly_one_hot(&self) -> bool {
        self.matrix.rows_iter().all(|row| {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            ones == 1 && ones + zeros == row.len()
        })
    }
}
