//! Naive reference implementations and random-instance generators shared by
//! the integration suites. Every oracle is a direct loop over the defining
//! formula and deliberately shares no code with the library.

// Each integration suite compiles this module separately and uses its own
// subset of the helpers.
#![allow(dead_code)]

use csls::matrix::Matrix;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(r))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Row-stochastic matrix with strictly positive entries.
pub fn random_stochastic(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(r);
                z.exp()
            })
            .collect();
        let sum: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|v| v / sum));
    }
    Matrix::new(rows, cols, data).unwrap()
}

/// n labels over c classes with every class present (n >= c).
pub fn random_labels_covering(r: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    assert!(n >= c, "need at least one sample per class");
    (0..n)
        .map(|i| if i < c { i } else { r.random_range(0..c) })
        .collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean embedding per class; classes without samples get a zero row.
pub fn naive_prototypes(x: &Matrix, labels: &[usize], c: usize) -> Matrix {
    let d = x.cols();
    let mut out = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (n, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for j in 0..d {
            out.set(y, j, out.get(y, j) + x.get(n, j));
        }
    }
    for i in 0..c {
        if counts[i] > 0 {
            for j in 0..d {
                out.set(i, j, out.get(i, j) / counts[i] as f64);
            }
        }
    }
    out
}

pub fn naive_cosine(p: &Matrix) -> Matrix {
    let c = p.rows();
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            let mut dot = 0.0;
            let mut ni = 0.0;
            let mut nj = 0.0;
            for t in 0..p.cols() {
                dot += p.get(i, t) * p.get(j, t);
                ni += p.get(i, t) * p.get(i, t);
                nj += p.get(j, t) * p.get(j, t);
            }
            out.set(i, j, dot / (ni.sqrt() * nj.sqrt()));
        }
    }
    out
}

/// Row-softmax of S_ij / N_j^gamma.
pub fn naive_modulate(s: &Matrix, counts: &[usize], gamma: f64) -> Matrix {
    let c = s.rows();
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        let mut denom = 0.0;
        for k in 0..c {
            denom += (s.get(i, k) / (counts[k] as f64).powf(gamma)).exp();
        }
        for j in 0..c {
            let num = (s.get(i, j) / (counts[j] as f64).powf(gamma)).exp();
            out.set(i, j, num / denom);
        }
    }
    out
}

pub fn naive_smooth_uniform(labels: &[usize], c: usize, eps: f64) -> Matrix {
    let mut out = Matrix::zeros(labels.len(), c);
    for (n, &y) in labels.iter().enumerate() {
        for j in 0..c {
            let onehot = if j == y { 1.0 } else { 0.0 };
            out.set(n, j, (1.0 - eps) * onehot + eps / c as f64);
        }
    }
    out
}

/// Row orientation: sample of class y takes its smoothing weights from
/// row y of S'.
pub fn naive_smooth_similarity(labels: &[usize], sprime: &Matrix, eps: f64) -> Matrix {
    let c = sprime.rows();
    let mut out = Matrix::zeros(labels.len(), c);
    for (n, &y) in labels.iter().enumerate() {
        for j in 0..c {
            let onehot = if j == y { 1.0 } else { 0.0 };
            out.set(n, j, (1.0 - eps) * onehot + eps * sprime.get(y, j));
        }
    }
    out
}

/// The library's documented bin convention: 1-indexed, first b with
/// conf <= b/B, overflow into bin B.
fn bin_of(conf: f64, b: usize) -> usize {
    for i in 1..b {
        if conf <= i as f64 / b as f64 {
            return i;
        }
    }
    b
}

/// Signed per-class gap under predicted-class grouping:
/// delta_i = sum_b (N_ib / N_i) (acc_ib - conf_ib); unobserved classes 0.
pub fn naive_delta(scores: &Matrix, labels: &[usize], c: usize, b: usize) -> Vec<f64> {
    let mut count = vec![0usize; c * b];
    let mut acc = vec![0.0f64; c * b];
    let mut conf = vec![0.0f64; c * b];
    for (n, &y) in labels.iter().enumerate() {
        let row = scores.row(n);
        let pred = argmax(row);
        let p = row[pred];
        let cell = pred * b + bin_of(p, b) - 1;
        count[cell] += 1;
        if y == pred {
            acc[cell] += 1.0;
        }
        conf[cell] += p;
    }
    (0..c)
        .map(|i| {
            let total: usize = (0..b).map(|k| count[i * b + k]).sum();
            if total == 0 {
                return 0.0;
            }
            (0..b)
                .map(|k| {
                    let cell = i * b + k;
                    if count[cell] == 0 {
                        return 0.0;
                    }
                    let w = count[cell] as f64 / total as f64;
                    w * (acc[cell] / count[cell] as f64 - conf[cell] / count[cell] as f64)
                })
                .sum()
        })
        .collect()
}

/// Aggregate ECE: all samples binned by max confidence, absolute gaps.
pub fn naive_ece(scores: &Matrix, labels: &[usize], b: usize) -> f64 {
    let n = scores.rows();
    let mut count = vec![0usize; b];
    let mut acc = vec![0.0f64; b];
    let mut conf = vec![0.0f64; b];
    for (i, &y) in labels.iter().enumerate() {
        let row = scores.row(i);
        let pred = argmax(row);
        let p = row[pred];
        let k = bin_of(p, b) - 1;
        count[k] += 1;
        if y == pred {
            acc[k] += 1.0;
        }
        conf[k] += p;
    }
    (0..b)
        .map(|k| {
            if count[k] == 0 {
                return 0.0;
            }
            let w = count[k] as f64 / n as f64;
            w * (acc[k] / count[k] as f64 - conf[k] / count[k] as f64).abs()
        })
        .sum()
}

/// y + lambda * delta, clamped to [0, 1] and renormalized; rows whose clamp
/// leaves zero mass fall back to the input row and are reported.
pub fn naive_correct(scores: &Matrix, delta: &[f64], lambda: f64) -> (Matrix, Vec<usize>) {
    let (n, c) = (scores.rows(), scores.cols());
    let mut out = Matrix::zeros(n, c);
    let mut fallback = Vec::new();
    for i in 0..n {
        let mut row: Vec<f64> = (0..c)
            .map(|j| (scores.get(i, j) + lambda * delta[j]).clamp(0.0, 1.0))
            .collect();
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            fallback.push(i);
            row = scores.row(i).to_vec();
        } else {
            for v in &mut row {
                *v /= sum;
            }
        }
        for (j, v) in row.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    (out, fallback)
}

/// Brute-force cosine k-NN per query (ties to the lower pool index), then
/// first-occurrence dedup across queries in rank order.
pub fn naive_knn(pool: &Matrix, queries: &Matrix, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut seen = vec![false; pool.rows()];
    for q in 0..queries.rows() {
        let mut scored: Vec<(usize, f64)> = (0..pool.rows())
            .map(|p| {
                let mut dot = 0.0;
                let mut np = 0.0;
                let mut nq = 0.0;
                for t in 0..pool.cols() {
                    dot += pool.get(p, t) * queries.get(q, t);
                    np += pool.get(p, t) * pool.get(p, t);
                    nq += queries.get(q, t) * queries.get(q, t);
                }
                (p, dot / (np.sqrt() * nq.sqrt()))
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        for &(p, _) in scored.iter().take(k) {
            if !seen[p] {
                seen[p] = true;
                out.push(p);
            }
        }
    }
    out
}
