//! Reference models over "normal" embeddings, distance scoring and the
//! Gamma-percentile decision rule.

mod gamma;
mod io;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ClipMeta;

pub use gamma::{fit_gamma, gamma_quantile, GammaParams, MIN_GAMMA_SAMPLES};
pub use io::{read_embeddings_csv, write_embeddings_csv, EmbeddingRow};

/// Covariance ridge as a fraction of the mean variance, `trace(S) / d`.
pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is not positive definite even after regularization")]
    SingularCovariance,
    #[error("need at least {need} embeddings, got {got}")]
    TooFewEmbeddings { need: usize, got: usize },
    #[error("need at least {need} samples for a Gamma fit, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("invalid sample value {0}")]
    InvalidSample(f64),
    #[error("invalid Gamma parameters (shape {shape}, scale {scale})")]
    InvalidGamma { shape: f64, scale: f64 },
    #[error("quantile level {0} is outside (0, 1)")]
    QOutOfRange(f64),
    #[error("no segment embeddings to score")]
    EmptyInput,
    #[error("malformed reference model: {0}")]
    InvalidReference(String),
    #[error("malformed embeddings file: {0}")]
    InvalidEmbeddings(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    #[default]
    Mahalanobis,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Mahalanobis => "mahalanobis",
        })
    }
}

/// How segment distances collapse to one clip score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Anomaly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScore {
    pub clip: ClipMeta,
    pub score: f64,
    pub decision: Decision,
    pub threshold_used: f64,
}

/// Squared Euclidean distance `||x - m||^2`.
pub fn euclidean_distance(x: &[f64], m: &[f64]) -> Result<f64, AnomalyError> {
    check_dim(m.len(), x.len())?;
    Ok(x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum())
}

fn check_dim(expected: usize, got: usize) -> Result<(), AnomalyError> {
    if expected == got {
        Ok(())
    } else {
        Err(AnomalyError::DimensionMismatch { expected, got })
    }
}

/// Mean, covariance and the Gamma law of train distances to the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub metric: Metric,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Inverse of `covariance + epsilon * I`.
    pub inv_cov: DMatrix<f64>,
    pub epsilon: f64,
    pub gamma: GammaParams,
    pub provenance: BTreeMap<String, String>,
}

impl ReferenceModel {
    /// Assembles a model from its statistics, inverting the regularized
    /// covariance. The Gamma law is taken as given.
    pub fn from_parts(
        metric: Metric,
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        epsilon: f64,
        gamma: GammaParams,
    ) -> Result<Self, AnomalyError> {
        let d = mean.len();
        if d == 0 {
            return Err(AnomalyError::InvalidReference(
                "embedding dimension is zero".into(),
            ));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(AnomalyError::InvalidReference(format!(
                "covariance is {}x{}, expected {d}x{d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(AnomalyError::InvalidReference(format!(
                "epsilon {epsilon} is invalid"
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-9 {
                    return Err(AnomalyError::InvalidReference(
                        "covariance is not symmetric".into(),
                    ));
                }
            }
        }
        gamma.validate()?;
        let ridge = &covariance + DMatrix::identity(d, d) * epsilon;
        let chol = ridge.cholesky().ok_or(AnomalyError::SingularCovariance)?;
        let inv_cov = chol.inverse();
        if !inv_cov.iter().all(|v| v.is_finite()) {
            return Err(AnomalyError::SingularCovariance);
        }
        Ok(Self {
            metric,
            mean,
            covariance,
            inv_cov,
            epsilon,
            gamma,
            provenance: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `sqrt((x - m)^T (S + eps I)^-1 (x - m))`.
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64, AnomalyError> {
        check_dim(self.dim(), x.len())?;
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let q = diff.dot(&(&self.inv_cov * &diff));
        Ok(q.max(0.0).sqrt())
    }

    /// Distance under this model's metric.
    pub fn distance(&self, x: &[f64]) -> Result<f64, AnomalyError> {
        match self.metric {
            Metric::Euclidean => euclidean_distance(x, &self.mean),
            Metric::Mahalanobis => self.mahalanobis(x),
        }
    }

    pub fn threshold(&self, q: f64) -> Result<f64, AnomalyError> {
        gamma_quantile(&self.gamma, q)
    }
}

pub fn mahalanobis_distance(x: &[f64], reference: &ReferenceModel) -> Result<f64, AnomalyError> {
    reference.mahalanobis(x)
}

/// Fits with the default covariance ridge.
pub fn fit_reference(
    embeddings: &[Vec<f64>],
    metric: Metric,
) -> Result<ReferenceModel, AnomalyError> {
    fit_reference_with_ridge(embeddings, metric, DEFAULT_RIDGE)
}

/// Sample mean and covariance (n - 1 denominator), inverse of
/// `S + ridge * trace(S) / d * I`, and a Gamma fit to the train distances.
pub fn fit_reference_with_ridge(
    embeddings: &[Vec<f64>],
    metric: Metric,
    ridge: f64,
) -> Result<ReferenceModel, AnomalyError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(AnomalyError::TooFewEmbeddings { need: 2, got: n });
    }
    let d = embeddings[0].len();
    if d == 0 {
        return Err(AnomalyError::InvalidEmbeddings(
            "embeddings are empty vectors".into(),
        ));
    }
    for e in embeddings {
        check_dim(d, e.len())?;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(AnomalyError::InvalidEmbeddings(
                "non-finite embedding value".into(),
            ));
        }
    }
    if metric == Metric::Mahalanobis && n < d + 1 {
        log::warn!(
            "only {n} embeddings for a {d}-dimensional covariance; the estimate is rank deficient"
        );
    }

    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| embeddings[i][j] - mean[j]);
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    // Exact symmetry.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let epsilon = ridge * cov.trace() / d as f64;

    let placeholder = GammaParams {
        shape: 1.0,
        scale: 1.0,
    };
    let mut model = ReferenceModel::from_parts(metric, mean, cov, epsilon, placeholder)?;
    let distances = embeddings
        .iter()
        .map(|e| model.distance(e))
        .collect::<Result<Vec<_>, _>>()?;
    model.gamma = fit_gamma(&distances)?;
    model
        .provenance
        .insert("n_embeddings".into(), n.to_string());
    Ok(model)
}

/// Aggregates per-segment distances into one clip score.
pub fn score_clip(
    segment_embeddings: &[Vec<f64>],
    reference: &ReferenceModel,
    reducer: Reducer,
) -> Result<f64, AnomalyError> {
    if segment_embeddings.is_empty() {
        return Err(AnomalyError::EmptyInput);
    }
    let d = segment_embeddings
        .iter()
        .map(|e| reference.distance(e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(reduce(&d, reducer))
}

pub fn reduce(values: &[f64], reducer: Reducer) -> f64 {
    match reducer {
        Reducer::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Reducer::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Anomaly iff the score is strictly above the q-quantile of the reference
/// Gamma law.
pub fn decide(
    score: f64,
    reference: &ReferenceModel,
    q: f64,
) -> Result<(Decision, f64), AnomalyError> {
    let t = reference.threshold(q)?;
    let decision = if score > t {
        Decision::Anomaly
    } else {
        Decision::Normal
    };
    Ok((decision, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    fn identity_ref(mean: Vec<f64>, metric: Metric) -> ReferenceModel {
        let d = mean.len();
        ReferenceModel::from_parts(
            metric,
            mean,
            DMatrix::identity(d, d),
            0.0,
            GammaParams {
                shape: 2.0,
                scale: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        let v = euclidean_distance(&[0.3, 0.7], &[0.25, 0.75]).unwrap();
        assert!((v - 0.005).abs() < 1e-15);
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(AnomalyError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let r = identity_ref(vec![0.0, 0.0], Metric::Mahalanobis);
        assert_eq!(r.mahalanobis(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((r.mahalanobis(&[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-12);

        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let r = ReferenceModel::from_parts(
            Metric::Mahalanobis,
            vec![0.0, 0.0],
            cov,
            0.0,
            GammaParams {
                shape: 1.0,
                scale: 1.0,
            },
        )
        .unwrap();
        assert!((r.mahalanobis(&[2.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regularized_inverse_is_an_inverse() {
        let r = fit_reference(&gaussian(200, 5, 3), Metric::Mahalanobis).unwrap();
        let ridge = &r.covariance + DMatrix::identity(5, 5) * r.epsilon;
        let prod = &r.inv_cov * ridge;
        assert!((prod - DMatrix::identity(5, 5)).amax() < 1e-6);
    }

    #[test]
    fn midpoint_mean() {
        let e: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let mean = vec![1.0, 1.0];
        // Two points cannot support a Gamma fit, but the statistics are defined.
        assert!(matches!(
            fit_reference(&e, Metric::Euclidean),
            Err(AnomalyError::TooFewSamples { .. })
        ));
        let mut e12 = e.clone();
        e12.extend((0..10).map(|i| {
            if i % 2 == 0 {
                vec![0.5, 1.5]
            } else {
                vec![1.5, 0.5]
            }
        }));
        assert_eq!(fit_reference(&e12, Metric::Euclidean).unwrap().mean, mean);
    }

    #[test]
    fn single_embedding_is_rejected() {
        assert!(matches!(
            fit_reference(&[vec![1.0, 2.0]], Metric::Mahalanobis),
            Err(AnomalyError::TooFewEmbeddings { need: 2, got: 1 })
        ));
    }

    #[test]
    fn squared_mahalanobis_of_isotropic_gaussian_averages_to_dim() {
        let d = 8;
        let data = gaussian(1000, d, 5);
        let r = fit_reference(&data, Metric::Mahalanobis).unwrap();
        let mean_sq = data
            .iter()
            .map(|x| r.mahalanobis(x).unwrap().powi(2))
            .sum::<f64>()
            / 1000.0;
        assert!((mean_sq - d as f64).abs() < 0.1 * d as f64, "{mean_sq}");
    }

    #[test]
    fn simplex_embeddings_need_the_ridge() {
        // Softmax outputs sum to one, so their covariance is singular.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        assert!(matches!(
            fit_reference_with_ridge(&data, Metric::Mahalanobis, 0.0),
            Err(AnomalyError::SingularCovariance)
        ));
        fit_reference(&data, Metric::Mahalanobis).unwrap();
    }

    #[test]
    fn clip_reducers() {
        let r = identity_ref(vec![0.0], Metric::Euclidean);
        let segs = vec![vec![1.0], vec![2f64.sqrt()], vec![3f64.sqrt()]];
        assert!((score_clip(&segs[..1], &r, Reducer::Mean).unwrap() - 1.0).abs() < 1e-12);
        assert!((score_clip(&segs, &r, Reducer::Mean).unwrap() - 2.0).abs() < 1e-12);
        assert!((score_clip(&segs, &r, Reducer::Max).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            score_clip(&[], &r, Reducer::Mean),
            Err(AnomalyError::EmptyInput)
        ));
    }

    #[test]
    fn decision_boundary_is_strict() {
        let r = identity_ref(vec![0.0], Metric::Euclidean);
        let t = r.threshold(0.9).unwrap();
        assert_eq!(decide(t, &r, 0.9).unwrap().0, Decision::Normal);
        assert_eq!(
            decide(t * (1.0 + 1e-12), &r, 0.9).unwrap().0,
            Decision::Anomaly
        );
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(decide(0.0, &r, q).unwrap().0, Decision::Normal);
        }
    }

    #[test]
    fn train_rescoring_flags_about_one_in_ten() {
        let data = gaussian(1000, 4, 21);
        let r = fit_reference(&data, Metric::Mahalanobis).unwrap();
        let flagged = data
            .iter()
            .filter(|x| decide(r.distance(x).unwrap(), &r, 0.9).unwrap().0 == Decision::Anomaly)
            .count();
        let rate = flagged as f64 / 1000.0;
        assert!((rate - 0.1).abs() <= 0.03, "{rate}");
    }
}
