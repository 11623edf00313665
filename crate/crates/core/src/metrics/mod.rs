//! Ranking metrics, evaluation reports and the sweep runners.

mod report;
mod sweep;

use thiserror::Error;

pub use report::{
    emit_report, parse_report_csv, EvalReport, ReportFormat, ReportRow, StratumDomain,
};
pub use sweep::{
    decision_counts, evaluate_scores, run_band_sweep, run_threshold_sweep, validate_grid,
    DecisionCounts, DEFAULT_Q_GRID, THRESHOLD_NOTE,
};

pub const DEFAULT_PAUC_P: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("both normal and anomalous scores are required")]
    OneClassOnly,
    #[error("pAUC range p must lie in (0, 1], got {0}")]
    InvalidP(f64),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores with binary labels, `true` meaning anomalous.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        let s = Self { scores, labels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.scores.len() != self.labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: self.scores.len(),
                labels: self.labels.len(),
            });
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore(i));
        }
        Ok(())
    }

    pub fn n_anomaly(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_normal(&self) -> usize {
        self.labels.len() - self.n_anomaly()
    }
}

/// ROC vertices `(false positives, true positives)` in raw counts, one per
/// distinct score, walking the threshold from high to low. Tied scores move
/// along a diagonal.
fn roc_counts(set: &ScoredSet) -> Vec<(f64, f64)> {
    let mut idx: Vec<usize> = (0..set.scores.len()).collect();
    idx.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = set.scores[idx[i]];
        while i < idx.len() && set.scores[idx[i]] == s {
            if set.labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp, tp));
    }
    pts
}

fn check_two_classes(set: &ScoredSet) -> Result<(f64, f64), MetricsError> {
    set.validate()?;
    let (na, nn) = (set.n_anomaly(), set.n_normal());
    if na == 0 || nn == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    Ok((na as f64, nn as f64))
}

/// Mann-Whitney AUC: the fraction of (anomaly, normal) pairs ranked
/// correctly, ties counting one half.
pub fn auc(set: &ScoredSet) -> Result<f64, MetricsError> {
    pauc(set, 1.0)
}

/// ROC area over false-positive rates `[0, p]`, divided by `p`.
pub fn pauc(set: &ScoredSet, p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricsError::InvalidP(p));
    }
    let (na, nn) = check_two_classes(set)?;
    let limit = p * nn;
    let pts = roc_counts(set);
    // Twice the area in count units, so full-range sums stay exact.
    let mut area2 = 0.0;
    for w in pts.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        if f0 >= limit {
            break;
        }
        if f1 <= limit {
            area2 += (f1 - f0) * (t0 + t1);
        } else {
            let t_at = t0 + (t1 - t0) * (limit - f0) / (f1 - f0);
            area2 += (limit - f0) * (t0 + t_at);
            break;
        }
    }
    Ok(area2 / (2.0 * na * limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(set: &ScoredSet) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in set.labels.iter().enumerate() {
            for (j, &lj) in set.labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    let (a, n) = (set.scores[i], set.scores[j]);
                    if a > n {
                        num += 1.0;
                    } else if a == n {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let s = ScoredSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![false, false, true, true]).unwrap();
        assert_eq!(auc(&s).unwrap(), 0.75);
        let perfect =
            ScoredSet::new(vec![0.0, 1.0, 2.0, 3.0], vec![false, false, true, true]).unwrap();
        assert_eq!(auc(&perfect).unwrap(), 1.0);
        let ties = ScoredSet::new(vec![1.0; 5], vec![true, false, true, false, false]).unwrap();
        assert_eq!(auc(&ties).unwrap(), 0.5);
    }

    #[test]
    fn pauc_extremes() {
        let perfect =
            ScoredSet::new(vec![0.0, 1.0, 2.0, 3.0], vec![false, false, true, true]).unwrap();
        let reversed =
            ScoredSet::new(vec![3.0, 2.0, 1.0, 0.0], vec![false, false, true, true]).unwrap();
        for p in [0.05, 0.1, 0.5, 1.0] {
            assert_eq!(pauc(&perfect, p).unwrap(), 1.0);
            assert_eq!(pauc(&reversed, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn pauc_interpolates_inside_a_step() {
        // ROC: (0,0) -> (0,0.5) -> (0.5,0.5) -> (0.5,1) -> (1,1).
        let s = ScoredSet::new(vec![4.0, 3.0, 2.0, 1.0], vec![true, false, true, false]).unwrap();
        assert!((pauc(&s, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((pauc(&s, 1.0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let one = ScoredSet::new(vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(matches!(auc(&one), Err(MetricsError::OneClassOnly)));
        let s = ScoredSet::new(vec![1.0, 2.0], vec![false, true]).unwrap();
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(pauc(&s, p), Err(MetricsError::InvalidP(_))));
        }
        assert!(ScoredSet::new(vec![1.0], vec![true, false]).is_err());
        assert!(ScoredSet::new(vec![f64::NAN, 1.0], vec![true, false]).is_err());
    }

    fn scored_set() -> impl Strategy<Value = ScoredSet> {
        (2usize..120).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..12, n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, mut l)| {
                    // Both classes must be present.
                    l[0] = true;
                    l[1] = false;
                    ScoredSet {
                        scores: s.into_iter().map(f64::from).collect(),
                        labels: l,
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(set in scored_set()) {
            let a = auc(&set).unwrap();
            prop_assert!((a - brute_force(&set)).abs() < 1e-12);
        }

        #[test]
        fn auc_ignores_monotone_transforms(set in scored_set()) {
            let t = ScoredSet {
                scores: set.scores.iter().map(|s| (0.3 * s).exp() - 7.0).collect(),
                labels: set.labels.clone(),
            };
            prop_assert_eq!(auc(&set).unwrap(), auc(&t).unwrap());
        }

        #[test]
        fn pauc_stays_in_unit_interval(set in scored_set(), p in 0.01f64..=1.0) {
            let v = pauc(&set, p).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        #[test]
        fn pushing_anomalies_up_never_lowers_pauc(set in scored_set(), p in 0.01f64..=1.0) {
            let boosted = ScoredSet {
                scores: set.scores.iter().zip(&set.labels).map(|(s, &l)| if l { s + 3.0 } else { *s }).collect(),
                labels: set.labels.clone(),
            };
            prop_assert!(pauc(&boosted, p).unwrap() >= pauc(&set, p).unwrap() - 1e-12);
        }
    }
}
