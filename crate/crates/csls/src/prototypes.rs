//! Class prototypes and prototype similarity.
//!
//! A prototype is the arithmetic mean of the raw embeddings of one class;
//! length normalization happens only when cosine similarity is taken. The
//! modulated similarity divides each column j of the cosine matrix by
//! count_j^gamma before a row softmax, so rows over rarer classes keep more
//! mass while frequent classes flatten toward uniform.

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::matrix::{dot, norm, Matrix};

/// Per-class mean embeddings with a validity mask. A class is valid iff it
/// has at least one instance and its mean has positive norm; invalid rows are
/// all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    matrix: Matrix,
    counts: Vec<usize>,
    valid: Vec<bool>,
}

impl PrototypeSet {
    /// Rebuilds a prototype set from an externally stored matrix and counts,
    /// recomputing the validity mask.
    pub fn from_parts(matrix: Matrix, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != matrix.rows() {
            return Err(Error::Dimension(format!(
                "{} prototype rows but {} class counts",
                matrix.rows(),
                counts.len()
            )));
        }
        let valid = counts
            .iter()
            .zip(matrix.rows_iter())
            .map(|(&n, row)| n >= 1 && norm(row) > 0.0)
            .collect();
        Ok(Self { matrix, counts, valid })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn is_all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Drops masked-invalid classes and reindexes the rest. Returns the
    /// reduced set and the original class index of each kept row.
    pub fn drop_invalid(&self) -> (PrototypeSet, Vec<usize>) {
        let kept: Vec<usize> = (0..self.num_classes()).filter(|&i| self.valid[i]).collect();
        let mut data = Vec::with_capacity(kept.len() * self.dim());
        for &i in &kept {
            data.extend_from_slice(self.matrix.row(i));
        }
        let matrix = Matrix::new(kept.len(), self.dim(), data)
            .expect("kept rows of a valid matrix stay valid");
        let counts = kept.iter().map(|&i| self.counts[i]).collect();
        let valid = vec![true; kept.len()];
        (PrototypeSet { matrix, counts, valid }, kept)
    }
}

/// Cosine similarities between prototypes, plus the optional modulated
/// row-stochastic variant and the gamma it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    raw: Matrix,
    modulated: Option<Matrix>,
    gamma: Option<f64>,
}

impl SimilarityMatrix {
    /// Wraps an externally stored raw cosine matrix: square, entries in
    /// [-1, 1], symmetric within 1e-9, unit diagonal within 1e-9.
    pub fn from_raw(raw: Matrix) -> Result<Self> {
        let c = raw.rows();
        if raw.cols() != c {
            return Err(Error::Dimension(format!(
                "similarity matrix must be square, got {}x{}",
                c,
                raw.cols()
            )));
        }
        for i in 0..c {
            if (raw.get(i, i) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidData(format!(
                    "similarity diagonal entry {i} is {}, expected 1",
                    raw.get(i, i)
                )));
            }
            for j in 0..c {
                let v = raw.get(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::InvalidData(format!(
                        "similarity entry ({i}, {j}) = {v} is outside [-1, 1]"
                    )));
                }
                if (v - raw.get(j, i)).abs() > 1e-9 {
                    return Err(Error::InvalidData(format!(
                        "similarity matrix is asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { raw, modulated: None, gamma: None })
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn modulated(&self) -> Option<&Matrix> {
        self.modulated.as_ref()
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }
}

/// Mean embedding per class. Classes with no instances are masked invalid
/// rather than rejected: prototypes are often built from a labeled subset.
pub fn compute_prototypes(embeddings: &Matrix, labels: &LabelSet) -> Result<PrototypeSet> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} embedding rows but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    let (c, d) = (labels.num_classes(), embeddings.cols());
    let counts = labels.class_counts();
    let mut m = Matrix::zeros(c, d);
    for (n, &l) in labels.labels().iter().enumerate() {
        let src = embeddings.row(n);
        let dst = m.row_mut(l);
        for j in 0..d {
            dst[j] += src[j];
        }
    }
    for (i, &n) in counts.iter().enumerate() {
        if n > 0 {
            let inv = 1.0 / n as f64;
            for v in m.row_mut(i) {
                *v *= inv;
            }
        }
    }
    if !m.is_finite() {
        return Err(Error::Numerical("prototype mean overflowed".into()));
    }
    PrototypeSet::from_parts(m, counts)
}

/// Pairwise cosine similarity of prototypes. All classes must be valid; call
/// [`PrototypeSet::drop_invalid`] first when they are not. The result is
/// exactly symmetric with a unit diagonal and entries clamped to [-1, 1].
pub fn cosine_similarity(protos: &PrototypeSet) -> Result<SimilarityMatrix> {
    let c = protos.num_classes();
    for i in 0..c {
        if protos.counts[i] == 0 {
            return Err(Error::EmptyClass { class: i });
        }
        if !protos.valid[i] {
            return Err(Error::SingularPrototype { class: i });
        }
    }
    let norms: Vec<f64> = protos.matrix.rows_iter().map(norm).collect();
    let mut s = Matrix::zeros(c, c);
    for i in 0..c {
        s.set(i, i, 1.0);
        for j in i + 1..c {
            let v = dot(protos.matrix.row(i), protos.matrix.row(j)) / (norms[i] * norms[j]);
            let v = v.clamp(-1.0, 1.0);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(SimilarityMatrix { raw: s, modulated: None, gamma: None })
}

/// Frequency-modulated row softmax: row i of the result is
/// softmax_j(S_ij / counts_j^gamma). Rows are stabilized by subtracting the
/// row max before exponentiation, which preserves values exactly.
pub fn modulate_similarity(
    sim: &SimilarityMatrix,
    counts: &[usize],
    gamma: f64,
) -> Result<SimilarityMatrix> {
    let c = sim.raw.rows();
    if counts.len() != c {
        return Err(Error::Dimension(format!(
            "{c} similarity rows but {} class counts",
            counts.len()
        )));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidData(format!(
            "gamma must be a finite nonnegative real, got {gamma}"
        )));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class: i });
    }
    let scale: Vec<f64> = counts.iter().map(|&n| (n as f64).powf(gamma)).collect();
    let mut out = Matrix::zeros(c, c);
    let mut z = vec![0.0; c];
    for i in 0..c {
        for j in 0..c {
            z[j] = sim.raw.get(i, j) / scale[j];
        }
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(i);
        let mut sum = 0.0;
        for j in 0..c {
            row[j] = (z[j] - zmax).exp();
            sum += row[j];
        }
        for v in row {
            *v /= sum;
        }
    }
    Ok(SimilarityMatrix {
        raw: sim.raw.clone(),
        modulated: Some(out),
        gamma: Some(gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn protos(rows: usize, cols: usize, data: Vec<f64>, counts: Vec<usize>) -> PrototypeSet {
        PrototypeSet::from_parts(Matrix::new(rows, cols, data).unwrap(), counts).unwrap()
    }

    #[test]
    fn singleton_classes_copy_embeddings() {
        let e = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = LabelSet::new(vec![0, 1], 2).unwrap();
        let p = compute_prototypes(&e, &l).unwrap();
        assert_eq!(p.matrix().data(), e.data());
        assert!(p.is_all_valid());
    }

    #[test]
    fn prototype_is_class_mean() {
        let e = Matrix::new(3, 2, vec![1.0, 0.0, 3.0, 2.0, 5.0, 5.0]).unwrap();
        let l = LabelSet::new(vec![0, 0, 1], 2).unwrap();
        let p = compute_prototypes(&e, &l).unwrap();
        assert_eq!(p.matrix().row(0), &[2.0, 1.0]);
        assert_eq!(p.matrix().row(1), &[5.0, 5.0]);
        assert_eq!(p.counts(), &[2, 1]);
    }

    #[test]
    fn instance_order_is_irrelevant() {
        let e1 = Matrix::new(3, 1, vec![1.0, 2.0, 9.0]).unwrap();
        let l1 = LabelSet::new(vec![0, 0, 1], 2).unwrap();
        let e2 = Matrix::new(3, 1, vec![9.0, 2.0, 1.0]).unwrap();
        let l2 = LabelSet::new(vec![1, 0, 0], 2).unwrap();
        assert_eq!(
            compute_prototypes(&e1, &l1).unwrap(),
            compute_prototypes(&e2, &l2).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = Matrix::new(2, 2, vec![1.0; 4]).unwrap();
        let l = LabelSet::new(vec![0, 1, 0], 2).unwrap();
        assert!(matches!(
            compute_prototypes(&e, &l).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn empty_class_is_masked_and_blocks_similarity() {
        let e = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = LabelSet::new(vec![0, 2], 3).unwrap();
        let p = compute_prototypes(&e, &l).unwrap();
        assert_eq!(p.valid(), &[true, false, true]);
        assert_eq!(p.matrix().row(1), &[0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&p).unwrap_err(),
            Error::EmptyClass { class: 1 }
        ));
        let (kept, map) = p.drop_invalid();
        assert_eq!(map, vec![0, 2]);
        assert_eq!(kept.num_classes(), 2);
        assert!(cosine_similarity(&kept).is_ok());
    }

    #[test]
    fn zero_norm_prototype_names_class() {
        // Class 0 embeddings cancel to the zero vector.
        let e = Matrix::new(3, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = LabelSet::new(vec![0, 0, 1], 2).unwrap();
        let p = compute_prototypes(&e, &l).unwrap();
        assert_eq!(p.valid(), &[false, true]);
        assert!(matches!(
            cosine_similarity(&p).unwrap_err(),
            Error::SingularPrototype { class: 0 }
        ));
    }

    #[test]
    fn cosine_hand_values() {
        let p = protos(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1, 1]);
        let s = cosine_similarity(&p).unwrap();
        assert_eq!(s.raw().data(), &[1.0, 0.0, 0.0, 1.0]);

        let p = protos(2, 2, vec![1.0, 0.0, 2.0, 0.0], vec![1, 1]);
        let s = cosine_similarity(&p).unwrap();
        assert_eq!(s.raw().get(0, 1), 1.0);

        let p = protos(2, 2, vec![1.0, 0.0, 1.0, 1.0], vec![1, 1]);
        let s = cosine_similarity(&p).unwrap();
        assert!((s.raw().get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_exactly_symmetric_with_unit_diagonal() {
        let mut rng = crate::rng::Seed(11).rng();
        let data = crate::rng::normal_vec(&mut rng, 5 * 3);
        let p = protos(5, 3, data, vec![1; 5]);
        let s = cosine_similarity(&p).unwrap();
        for i in 0..5 {
            assert_eq!(s.raw().get(i, i), 1.0);
            for j in 0..5 {
                assert_eq!(s.raw().get(i, j).to_bits(), s.raw().get(j, i).to_bits());
                assert!((-1.0..=1.0).contains(&s.raw().get(i, j)));
            }
        }
    }

    #[test]
    fn gamma_zero_is_plain_row_softmax() {
        let p = protos(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0], vec![7, 2, 40]);
        let s = cosine_similarity(&p).unwrap();
        let m = modulate_similarity(&s, &[7, 2, 40], 0.0).unwrap();
        let sp = m.modulated().unwrap();
        for i in 0..3 {
            let raw = s.raw().row(i);
            let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|v| (v - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..3 {
                assert!((sp.get(i, j) - exps[j] / sum).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_similarity_gives_uniform_rows() {
        let raw = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let sim = SimilarityMatrix::from_raw(raw).unwrap();
        let m = modulate_similarity(&sim, &[1, 1], 2.5).unwrap();
        assert_eq!(m.modulated().unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn modulation_matches_closed_form_two_classes() {
        let raw = Matrix::new(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let sim = SimilarityMatrix::from_raw(raw).unwrap();
        let m = modulate_similarity(&sim, &[1, 4], 1.0).unwrap();
        let sp = m.modulated().unwrap();
        // Row 0 logits are 1/1 and 0.5/4, so the first entry is
        // e / (e + e^0.125) = 1 / (1 + e^-0.875).
        let expected = 1.0 / (1.0 + (-0.875f64).exp());
        assert!((sp.get(0, 0) - expected).abs() < 1e-15);
        assert!((sp.get(0, 0) + sp.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((sp.get(0, 0) - 0.706).abs() < 1e-3);
        assert_eq!(m.gamma(), Some(1.0));
    }

    #[test]
    fn modulation_rejects_zero_counts_and_bad_gamma() {
        let raw = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sim = SimilarityMatrix::from_raw(raw).unwrap();
        assert!(matches!(
            modulate_similarity(&sim, &[1, 0], 1.0).unwrap_err(),
            Error::EmptyClass { class: 1 }
        ));
        assert!(modulate_similarity(&sim, &[1, 1], -0.5).is_err());
        assert!(modulate_similarity(&sim, &[1, 1], f64::NAN).is_err());
        assert!(modulate_similarity(&sim, &[1], 1.0).is_err());
    }

    #[test]
    fn embedding_scale_leaves_cosine_unchanged() {
        let mut rng = crate::rng::Seed(3).rng();
        let data = crate::rng::normal_vec(&mut rng, 6 * 4);
        let e = Matrix::new(6, 4, data).unwrap();
        let l = LabelSet::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let s1 = cosine_similarity(&compute_prototypes(&e, &l).unwrap()).unwrap();

        let mut scaled = e.clone();
        for (n, &lab) in l.labels().iter().enumerate() {
            if lab == 1 {
                for v in scaled.row_mut(n) {
                    *v *= 3.7;
                }
            }
        }
        let s2 = cosine_similarity(&compute_prototypes(&scaled, &l).unwrap()).unwrap();
        assert!(s1.raw().max_abs_diff(s2.raw()) < 1e-9);
    }

    #[test]
    fn higher_gamma_flattens_rows_toward_uniform() {
        let mut rng = crate::rng::Seed(17).rng();
        for _ in 0..20 {
            let data = crate::rng::normal_vec(&mut rng, 4 * 3);
            let p = protos(4, 3, data, vec![2, 5, 17, 3]);
            let s = match cosine_similarity(&p) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let dev = |gamma: f64| -> f64 {
                let m = modulate_similarity(&s, &[2, 5, 17, 3], gamma).unwrap();
                m.modulated()
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| (v - 0.25).abs())
                    .fold(0.0, f64::max)
            };
            let (d1, d4, d16) = (dev(1.0), dev(4.0), dev(16.0));
            assert!(d4 <= d1 + 1e-12, "dev grew from {d1} to {d4}");
            assert!(d16 <= d4 + 1e-12, "dev grew from {d4} to {d16}");
        }
    }

    proptest! {
        #[test]
        fn prop_rare_class_gets_more_mass(
            s in 0.01f64..1.0,
            t in -0.9f64..0.9,
            nj in 1usize..50,
            extra in 1usize..50,
            gamma in 0.1f64..4.0,
        ) {
            // Row 0 sees identical similarity s > 0 toward classes 1 and 2;
            // class 1 is rarer, so it must receive strictly more mass.
            let nk = nj + extra;
            let raw = Matrix::new(
                3,
                3,
                vec![1.0, s, s, s, 1.0, t, s, t, 1.0],
            ).unwrap();
            let sim = SimilarityMatrix::from_raw(raw).unwrap();
            let m = modulate_similarity(&sim, &[10, nj, nk], gamma).unwrap();
            let sp = m.modulated().unwrap();
            prop_assert!(sp.get(0, 1) > sp.get(0, 2));
        }

        #[test]
        fn prop_modulated_rows_are_distributions(
            seed in 0u64..500,
            gamma in 0.0f64..6.0,
        ) {
            let mut rng = crate::rng::Seed(seed).rng();
            let data = crate::rng::normal_vec(&mut rng, 5 * 4);
            let p = protos(5, 4, data, vec![3, 1, 9, 2, 30]);
            let s = cosine_similarity(&p).unwrap();
            let m = modulate_similarity(&s, &[3, 1, 9, 2, 30], gamma).unwrap();
            for row in m.modulated().unwrap().rows_iter() {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for &v in row {
                    prop_assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }
}
