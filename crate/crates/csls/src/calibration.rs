//! Reliability binning, aggregate ECE, and the per-class signed calibration
//! error vector (CCECE).
//!
//! Confidence bins partition [0, 1] into B equal widths; bin 1 covers
//! [0, 1/B] and bin b covers ((b-1)/B, b/B] above that. Bin indices come from
//! an edge scan against f64-computed edges rather than ceil(conf * B), which
//! misplaces edge confidences like 0.9 with B = 10.
//!
//! CCECE for class i is the count-weighted sum of signed (accuracy -
//! confidence) gaps over that class's bins. The sign survives: negative
//! means overconfident. Because the weights telescope, the value is
//! independent of B; aggregate ECE takes absolute gaps and is not.

use crate::error::{Error, Result};
use crate::jsonfmt::Json;
use crate::labels::{LabelSet, SoftLabels};
use crate::matrix::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningConfig {
    num_bins: usize,
}

impl BinningConfig {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::InvalidData("num_bins must be at least 1".into()));
        }
        Ok(Self { num_bins })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// 1-indexed bin of a confidence in [0, 1]: the first b with
    /// conf <= b/B. Values above 1 (possible within soft-label tolerance)
    /// land in bin B.
    pub fn bin_index(&self, conf: f64) -> usize {
        let b = self.num_bins;
        for i in 1..b {
            if conf <= i as f64 / b as f64 {
                return i;
            }
        }
        b
    }
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { num_bins: 10 }
    }
}

/// How samples are assigned to classes for per-class statistics.
/// Predicted-class indexes by argmax with max confidence (what a teacher
/// emits, so what Eq-style corrections must be keyed by); true-class indexes
/// by the label with the label's own score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    PredictedClass,
    TrueClass,
}

impl Grouping {
    pub fn name(&self) -> &'static str {
        match self {
            Grouping::PredictedClass => "predicted-class",
            Grouping::TrueClass => "true-class",
        }
    }
}

/// One (class, bin) cell. Sums are kept instead of means so downstream
/// aggregates telescope without reweighting error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStat {
    count: usize,
    acc_sum: f64,
    conf_sum: f64,
}

impl BinStat {
    pub fn count(&self) -> usize {
        self.count
    }

    /// Within-bin mean accuracy; None when the bin is empty.
    pub fn acc(&self) -> Option<f64> {
        (self.count > 0).then(|| self.acc_sum / self.count as f64)
    }

    /// Within-bin mean confidence; None when the bin is empty.
    pub fn conf(&self) -> Option<f64> {
        (self.count > 0).then(|| self.conf_sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    grouping: Grouping,
    num_bins: usize,
    num_classes: usize,
    bins: Vec<BinStat>,
    class_totals: Vec<usize>,
}

impl CalibrationReport {
    pub fn grouping(&self) -> Grouping {
        self.grouping
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Cell for a class and 1-indexed bin.
    pub fn bin(&self, class: usize, bin: usize) -> &BinStat {
        assert!(class < self.num_classes && (1..=self.num_bins).contains(&bin));
        &self.bins[class * self.num_bins + (bin - 1)]
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.class_totals[class]
    }

    /// Classes that received no samples under the report's grouping.
    pub fn unobserved(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&i| self.class_totals[i] == 0)
            .collect()
    }

    /// Per-class ECE: like the signed vector but with absolute gaps, so it
    /// upper-bounds |delta_i|.
    pub fn per_class_ece(&self) -> Vec<f64> {
        (0..self.num_classes)
            .map(|i| {
                let n = self.class_totals[i];
                if n == 0 {
                    return 0.0;
                }
                let sum: f64 = (1..=self.num_bins)
                    .map(|b| {
                        let s = self.bin(i, b);
                        (s.acc_sum - s.conf_sum).abs()
                    })
                    .sum();
                sum / n as f64
            })
            .collect()
    }

    /// JSON report: also serves as reliability-diagram plot data. `ece` is
    /// passed in because the aggregate uses its own grouping.
    pub fn to_json(&self, ece: f64) -> String {
        let mut bins = Vec::with_capacity(self.bins.len());
        for class in 0..self.num_classes {
            for b in 1..=self.num_bins {
                let s = self.bin(class, b);
                bins.push(Json::obj(vec![
                    ("class", Json::UInt(class as u64)),
                    ("bin", Json::UInt(b as u64)),
                    ("count", Json::UInt(s.count as u64)),
                    ("acc", s.acc().map_or(Json::Null, Json::Float)),
                    ("conf", s.conf().map_or(Json::Null, Json::Float)),
                ]));
            }
        }
        Json::obj(vec![
            ("grouping", Json::Str(self.grouping.name().into())),
            ("num_bins", Json::UInt(self.num_bins as u64)),
            ("ece", Json::Float(ece)),
            ("delta", Json::floats(&ccece(self))),
            ("unobserved", Json::uints(&self.unobserved())),
            ("bins", Json::Arr(bins)),
        ])
        .render()
    }
}

fn check_inputs(scores: &SoftLabels, labels: &LabelSet) -> Result<()> {
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
        return Err(Error::InvalidData(
            "calibration needs at least one sample".into(),
        ));
    }
    Ok(())
}

/// Bins every sample by confidence under the chosen grouping.
pub fn reliability_bins(
    scores: &SoftLabels,
    labels: &LabelSet,
    cfg: &BinningConfig,
    grouping: Grouping,
) -> Result<CalibrationReport> {
    check_inputs(scores, labels)?;
    let (c, b) = (scores.num_classes(), cfg.num_bins());
    let mut bins = vec![BinStat::default(); c * b];
    let mut class_totals = vec![0usize; c];
    for n in 0..scores.rows() {
        let row = scores.row(n);
        let pred = argmax(row);
        let truth = labels.labels()[n];
        let (class, conf, correct) = match grouping {
            Grouping::PredictedClass => (pred, row[pred], truth == pred),
            Grouping::TrueClass => (truth, row[truth], pred == truth),
        };
        let stat = &mut bins[class * b + (cfg.bin_index(conf) - 1)];
        stat.count += 1;
        stat.acc_sum += f64::from(u8::from(correct));
        stat.conf_sum += conf;
        class_totals[class] += 1;
    }
    Ok(CalibrationReport {
        grouping,
        num_bins: b,
        num_classes: c,
        bins,
        class_totals,
    })
}

/// Signed per-class calibration error. Unobserved classes get 0; the report
/// carries them in `unobserved()`.
pub fn ccece(report: &CalibrationReport) -> Vec<f64> {
    (0..report.num_classes)
        .map(|i| {
            let n = report.class_totals[i];
            if n == 0 {
                return 0.0;
            }
            let sum: f64 = (1..=report.num_bins)
                .map(|b| {
                    let s = report.bin(i, b);
                    s.acc_sum - s.conf_sum
                })
                .sum();
            sum / n as f64
        })
        .collect()
}

/// Aggregate ECE over all samples: max-confidence grouping, absolute gaps.
pub fn ece(scores: &SoftLabels, labels: &LabelSet, cfg: &BinningConfig) -> Result<f64> {
    check_inputs(scores, labels)?;
    let b = cfg.num_bins();
    let mut acc_sums = vec![0.0f64; b];
    let mut conf_sums = vec![0.0f64; b];
    for n in 0..scores.rows() {
        let row = scores.row(n);
        let pred = argmax(row);
        let conf = row[pred];
        let bi = cfg.bin_index(conf) - 1;
        acc_sums[bi] += f64::from(u8::from(labels.labels()[n] == pred));
        conf_sums[bi] += conf;
    }
    let total: f64 = (0..b).map(|i| (acc_sums[i] - conf_sums[i]).abs()).sum();
    Ok(total / scores.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn soft(rows: usize, cols: usize, data: Vec<f64>) -> SoftLabels {
        SoftLabels::from_matrix(Matrix::new(rows, cols, data).unwrap()).unwrap()
    }

    fn labels(l: Vec<usize>, c: usize) -> LabelSet {
        LabelSet::new(l, c).unwrap()
    }

    #[test]
    fn bin_edges_are_half_open() {
        let cfg = BinningConfig::new(10).unwrap();
        assert_eq!(cfg.bin_index(0.0), 1);
        assert_eq!(cfg.bin_index(0.1), 1);
        assert_eq!(cfg.bin_index(0.10000001), 2);
        assert_eq!(cfg.bin_index(0.5), 5);
        assert_eq!(cfg.bin_index(0.9), 9);
        assert_eq!(cfg.bin_index(0.95), 10);
        assert_eq!(cfg.bin_index(1.0), 10);
    }

    #[test]
    fn zero_bins_rejected() {
        assert!(BinningConfig::new(0).is_err());
        assert_eq!(BinningConfig::default().num_bins(), 10);
    }

    #[test]
    fn perfect_predictor_has_zero_errors() {
        let s = soft(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let l = labels(vec![0, 1, 0], 2);
        let cfg = BinningConfig::default();
        let report = reliability_bins(&s, &l, &cfg, Grouping::PredictedClass).unwrap();
        for class in 0..2 {
            let stat = report.bin(class, 10);
            assert_eq!(stat.acc(), Some(1.0));
            assert_eq!(stat.conf(), Some(1.0));
        }
        assert_eq!(ccece(&report), vec![0.0, 0.0]);
        assert_eq!(ece(&s, &l, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn overconfident_bin_yields_negative_delta() {
        // Four samples predicted class 0 at confidence 0.9, three correct.
        let s = soft(4, 2, vec![0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1]);
        let l = labels(vec![0, 0, 0, 1], 2);
        let cfg = BinningConfig::default();
        let report = reliability_bins(&s, &l, &cfg, Grouping::PredictedClass).unwrap();
        let stat = report.bin(0, 9);
        assert_eq!(stat.count(), 4);
        assert_eq!(stat.acc(), Some(0.75));
        assert!((stat.conf().unwrap() - 0.9).abs() < 1e-15);
        let delta = ccece(&report);
        assert!((delta[0] + 0.15).abs() < 1e-12);
        assert_eq!(delta[1], 0.0);
        assert_eq!(report.unobserved(), vec![1]);
        assert!((ece(&s, &l, &cfg).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn underconfident_bin_yields_positive_delta() {
        // Ten samples at confidence 0.6, nine correct: delta = +0.3.
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..10 {
            data.extend_from_slice(&[0.6, 0.4]);
            truth.push(usize::from(i == 9));
        }
        let s = soft(10, 2, data);
        let l = labels(truth, 2);
        let report =
            reliability_bins(&s, &l, &BinningConfig::default(), Grouping::PredictedClass).unwrap();
        let delta = ccece(&report);
        assert!((delta[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn true_class_grouping_uses_label_score() {
        let s = soft(1, 2, vec![0.3, 0.7]);
        let l = labels(vec![0], 2);
        let report =
            reliability_bins(&s, &l, &BinningConfig::default(), Grouping::TrueClass).unwrap();
        let stat = report.bin(0, 3);
        assert_eq!(stat.count(), 1);
        assert_eq!(stat.acc(), Some(0.0));
        assert!((stat.conf().unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(report.class_total(1), 0);
        let delta = ccece(&report);
        assert!((delta[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn all_wrong_at_full_confidence_gives_ece_one() {
        let s = soft(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        let l = labels(vec![1, 1], 2);
        assert_eq!(ece(&s, &l, &BinningConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn delta_is_independent_of_bin_count() {
        // Confidences sit on bin centers of B=5; refining to B=10 (or any B)
        // must leave the signed vector unchanged because it telescopes.
        let s = soft(
            4,
            2,
            vec![0.5, 0.5, 0.7, 0.3, 0.9, 0.1, 0.7, 0.3],
        );
        let l = labels(vec![0, 0, 1, 1], 2);
        let d5 = ccece(
            &reliability_bins(&s, &l, &BinningConfig::new(5).unwrap(), Grouping::PredictedClass)
                .unwrap(),
        );
        let d10 = ccece(
            &reliability_bins(&s, &l, &BinningConfig::new(10).unwrap(), Grouping::PredictedClass)
                .unwrap(),
        );
        let d1 = ccece(
            &reliability_bins(&s, &l, &BinningConfig::new(1).unwrap(), Grouping::PredictedClass)
                .unwrap(),
        );
        for i in 0..2 {
            assert!((d5[i] - d10[i]).abs() < 1e-12);
            assert!((d5[i] - d1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        let s = soft(2, 2, vec![0.6, 0.4, 0.5, 0.5]);
        let cfg = BinningConfig::default();
        let short = labels(vec![0], 2);
        assert!(reliability_bins(&s, &short, &cfg, Grouping::PredictedClass).is_err());
        let wide = labels(vec![0, 2], 3);
        assert!(ece(&s, &wide, &cfg).is_err());
    }

    #[test]
    fn json_report_shape() {
        let s = soft(1, 2, vec![0.8, 0.2]);
        let l = labels(vec![0], 2);
        let report =
            reliability_bins(&s, &l, &BinningConfig::new(2).unwrap(), Grouping::PredictedClass)
                .unwrap();
        let text = report.to_json(ece(&s, &l, &BinningConfig::new(2).unwrap()).unwrap());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["grouping"], "predicted-class");
        assert_eq!(v["num_bins"], 2);
        assert_eq!(v["delta"].as_array().unwrap().len(), 2);
        assert_eq!(v["unobserved"], serde_json::json!([1]));
        assert_eq!(v["bins"].as_array().unwrap().len(), 4);
        // Occupied cell carries means, empty cell carries nulls.
        assert_eq!(v["bins"][1]["count"], 1);
        assert_eq!(v["bins"][1]["acc"], 1.0);
        assert_eq!(v["bins"][2]["acc"], serde_json::Value::Null);
    }

    fn random_report(seed: u64, grouping: Grouping) -> (SoftLabels, LabelSet, CalibrationReport) {
        let mut rng = crate::rng::Seed(seed).rng();
        let (n, c) = (40, 4);
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            data.extend(raw.into_iter().map(|v| v / sum));
        }
        let s = soft(n, c, data);
        let l = labels((0..n).map(|_| rng.random_range(0..c)).collect(), c);
        let report = reliability_bins(&s, &l, &BinningConfig::default(), grouping).unwrap();
        (s, l, report)
    }

    proptest! {
        #[test]
        fn prop_signed_error_bounded_by_absolute(seed in 0u64..200, tc in proptest::bool::ANY) {
            let grouping = if tc { Grouping::TrueClass } else { Grouping::PredictedClass };
            let (_, _, report) = random_report(seed, grouping);
            let delta = ccece(&report);
            let per_class = report.per_class_ece();
            for i in 0..delta.len() {
                prop_assert!(delta[i].abs() <= per_class[i] + 1e-12);
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&delta[i]));
            }
        }

        #[test]
        fn prop_bin_counts_partition_classes(seed in 0u64..200) {
            let (s, _, report) = random_report(seed, Grouping::PredictedClass);
            let mut total = 0;
            for class in 0..report.num_classes() {
                let class_sum: usize =
                    (1..=report.num_bins()).map(|b| report.bin(class, b).count()).sum();
                prop_assert_eq!(class_sum, report.class_total(class));
                total += class_sum;
            }
            prop_assert_eq!(total, s.rows());
        }

        #[test]
        fn prop_delta_invariant_to_sample_order(seed in 0u64..100) {
            let (s, l, report) = random_report(seed, Grouping::PredictedClass);
            let n = s.rows();
            // Reverse the sample order.
            let mut data = Vec::with_capacity(n * s.num_classes());
            let mut lab = Vec::with_capacity(n);
            for i in (0..n).rev() {
                data.extend_from_slice(s.row(i));
                lab.push(l.labels()[i]);
            }
            let s2 = soft(n, s.num_classes(), data);
            let l2 = labels(lab, l.num_classes());
            let report2 =
                reliability_bins(&s2, &l2, &BinningConfig::default(), Grouping::PredictedClass)
                    .unwrap();
            let (d1, d2) = (ccece(&report), ccece(&report2));
            for i in 0..d1.len() {
                prop_assert!((d1[i] - d2[i]).abs() < 1e-12);
            }
        }
    }
}
