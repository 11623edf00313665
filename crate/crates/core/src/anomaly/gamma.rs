use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_lr, digamma, ln_gamma};

use super::AnomalyError;

pub const MIN_GAMMA_SAMPLES: usize = 10;
const ZERO_CLAMP: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
const QUANTILE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, AnomalyError> {
        let p = Self { shape, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnomalyError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.shape) && ok(self.scale) {
            Ok(())
        } else {
            Err(AnomalyError::InvalidGamma {
                shape: self.shape,
                scale: self.scale,
            })
        }
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    /// P(X <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x.is_infinite() {
            return 1.0;
        }
        checked_gamma_lr(self.shape, x / self.scale).unwrap_or(f64::NAN)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let z = x / self.scale;
        ((self.shape - 1.0) * z.ln() - z - ln_gamma(self.shape)).exp() / self.scale
    }
}

/// Trigamma by upward recurrence to x >= 12, then the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0))))
}

/// Maximum-likelihood Gamma fit. Newton's method solves
/// `ln k - digamma(k) = ln(mean) - mean(ln x)` from Minka's closed-form start;
/// if it fails to converge the method-of-moments estimate is returned.
pub fn fit_gamma(values: &[f64]) -> Result<GammaParams, AnomalyError> {
    if values.len() < MIN_GAMMA_SAMPLES {
        return Err(AnomalyError::TooFewSamples {
            need: MIN_GAMMA_SAMPLES,
            got: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(AnomalyError::InvalidSample(*v));
    }
    let zeros = values.iter().filter(|&&v| v < ZERO_CLAMP).count();
    if zeros > 0 {
        log::warn!("{zeros} zero distances clamped to {ZERO_CLAMP:e} before the Gamma fit");
    }
    let xs: Vec<f64> = values.iter().map(|&v| v.max(ZERO_CLAMP)).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > f64::EPSILON * mean * mean) {
        return Err(AnomalyError::DegenerateSample);
    }
    let s = mean.ln() - xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let moments = || GammaParams {
        shape: mean * mean / var,
        scale: var / mean,
    };
    if !(s.is_finite() && s > 0.0) {
        return Ok(moments());
    }

    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..NEWTON_MAX_ITER {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if !(next > 0.0) {
            next = k / 2.0;
        }
        let done = ((next - k) / k).abs() < 1e-12;
        k = next;
        if done {
            return GammaParams::new(k, mean / k);
        }
    }
    log::warn!("Gamma MLE did not converge; using the method-of-moments estimate");
    Ok(moments())
}

/// Inverse CDF by safeguarded Newton iteration on the regularized lower
/// incomplete gamma function.
pub fn gamma_quantile(params: &GammaParams, q: f64) -> Result<f64, AnomalyError> {
    params.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(AnomalyError::QOutOfRange(q));
    }
    // Work with unit scale.
    let unit = GammaParams {
        shape: params.shape,
        scale: 1.0,
    };
    let (mut lo, mut hi) = (0.0f64, unit.shape.max(1.0));
    while unit.cdf(hi) < q {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let err = unit.cdf(x) - q;
        if err == 0.0 {
            break;
        }
        if err < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = err / unit.pdf(x);
        let newton = x - step;
        let next = if step.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - x).abs();
        x = next;
        if moved < QUANTILE_TOL * x.max(1.0) || hi - lo < QUANTILE_TOL * x.max(1e-300) {
            break;
        }
    }
    Ok(x * params.scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Gamma};

    #[test]
    fn trigamma_matches_known_values() {
        // pi^2 / 6 and pi^2 / 2 - 4
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(1.5) - (pi2 / 2.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn recovers_shape_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Gamma::new(2.0, 1.5).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let p = fit_gamma(&xs).unwrap();
        assert!((1.9..=2.1).contains(&p.shape), "{p:?}");
        assert!((1.425..=1.575).contains(&p.scale), "{p:?}");
    }

    #[test]
    fn exponential_has_unit_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = Exp::new(0.5).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let p = fit_gamma(&xs).unwrap();
        assert!((0.95..=1.05).contains(&p.shape), "{p:?}");
    }

    #[test]
    fn constant_sample_is_degenerate() {
        assert!(matches!(
            fit_gamma(&[3.0; 20]),
            Err(AnomalyError::DegenerateSample)
        ));
    }

    #[test]
    fn short_sample_is_rejected() {
        assert!(matches!(
            fit_gamma(&[1.0, 2.0, 3.0]),
            Err(AnomalyError::TooFewSamples { need: 10, got: 3 })
        ));
    }

    #[test]
    fn zeros_are_clamped_not_fatal() {
        let mut xs: Vec<f64> = (1..=20).map(f64::from).collect();
        xs[0] = 0.0;
        let p = fit_gamma(&xs).unwrap();
        p.validate().unwrap();
    }

    #[test]
    fn exponential_quantile_closed_form() {
        let p = GammaParams::new(1.0, 1.0).unwrap();
        let x = gamma_quantile(&p, 0.9).unwrap();
        assert!((x - 10f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn median_of_shape_two() {
        let p = GammaParams::new(2.0, 1.0).unwrap();
        let x = gamma_quantile(&p, 0.5).unwrap();
        assert!((x - 1.678_346_990_016_66).abs() < 1e-9, "{x}");
        assert!((p.cdf(x) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_q_gives_tiny_quantile() {
        let p = GammaParams::new(2.0, 3.0).unwrap();
        assert!(gamma_quantile(&p, 1e-12).unwrap() < 1e-4);
    }

    #[test]
    fn q_outside_unit_interval_is_rejected() {
        let p = GammaParams::new(2.0, 1.0).unwrap();
        for q in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                gamma_quantile(&p, q),
                Err(AnomalyError::QOutOfRange(_))
            ));
        }
    }

    #[test]
    fn quantile_is_strictly_monotone() {
        let p = GammaParams::new(0.7, 2.5).unwrap();
        let xs: Vec<f64> = (1..100)
            .map(|i| gamma_quantile(&p, f64::from(i) / 100.0).unwrap())
            .collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }
}
