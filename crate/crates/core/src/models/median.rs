//! Location inference from the sample median `T_n` under a standard normal
//! working distribution `F`.
//!
//! The estimating equation is the derivative of `½ log F(u){1 − F(u)}` with
//! `u = T_n − θ`:
//! `m_n(θ) = ½ f(u)/F(u) − ½ f(u)/{1 − F(u)}`.
//! Its variance is estimated by the estimating-equations bootstrap, resampling
//! the data and recomputing the median. The resampled medians are drawn once
//! and shared across θ.

use crate::error::{QError, Result};
use crate::kernel::{ScoreModel, ScoreSummary};
use crate::params::Constraint;
use crate::special::{log_normal_cdf, log_normal_pdf, mills_ratio, normal_cdf};
use crate::weight::factorize_psd;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default number of bootstrap resamples.
pub const DEFAULT_RESAMPLES: usize = 200;

/// Baseline posteriors for θ given `T_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianPosterior {
    /// `exp{(n/2) log F(u)(1 − F(u))}`: the loss scaled by the sample size.
    #[default]
    Generalized,
    /// Density of the middle order statistic of n draws:
    /// `exp{½(n − 1) log F(u)(1 − F(u)) + log f(u)}`.
    OrderStatistic,
}

/// Sample median; averages the two middle values for even n.
pub fn sample_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `m(u) = ½ f(u)/F(u) − ½ f(u)/(1 − F(u))`, written with Mills ratios so both
/// tails stay finite.
#[inline]
pub fn median_score(u: f64) -> f64 {
    0.5 * (mills_ratio(u) - mills_ratio(-u))
}

/// Median of `0.9 N(θ, σ²) + 0.1 N(0, 1)` by bisection on the mixture CDF.
pub fn mixture_median(theta: f64, sigma: f64) -> f64 {
    let cdf = |x: f64| 0.9 * normal_cdf((x - theta) / sigma) + 0.1 * normal_cdf(x);
    let (mut lo, mut hi) = (theta.min(0.0) - 10.0 * sigma.max(1.0), theta.max(0.0) + 10.0 * sigma.max(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Unnormalised log density at θ of a baseline posterior given the median
/// `t_n` of n observations (flat prior).
pub fn baseline_log_density(t_n: f64, n: usize, theta: f64, kind: MedianPosterior) -> f64 {
    let u = t_n - theta;
    let log_ff = log_normal_cdf(u) + log_normal_cdf(-u);
    let n = n as f64;
    match kind {
        MedianPosterior::Generalized => 0.5 * n * log_ff,
        MedianPosterior::OrderStatistic => 0.5 * (n - 1.0) * log_ff + log_normal_pdf(u),
    }
}

#[derive(Debug, Clone)]
pub struct MedianModel {
    n: usize,
    t_n: f64,
    boot_medians: Vec<f64>,
}

impl MedianModel {
    /// Draws `resamples` bootstrap medians of `y` from `rng`.
    pub fn new<R: Rng + ?Sized>(y: &[f64], resamples: usize, rng: &mut R) -> Result<Self> {
        let n = y.len();
        if n < 3 {
            return Err(QError::InsufficientData { needed: 3, got: n });
        }
        if resamples < 2 {
            return Err(QError::InsufficientData { needed: 2, got: resamples });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(QError::NonFinite("median data"));
        }
        let mut buf = Vec::with_capacity(n);
        let boot_medians = (0..resamples)
            .map(|_| {
                buf.clear();
                for _ in 0..n {
                    buf.push(y[rng.random_range(0..n)]);
                }
                sample_median(&buf)
            })
            .collect();
        Ok(Self { n, t_n: sample_median(y), boot_medians })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_n(&self) -> f64 {
        self.t_n
    }

    pub fn boot_medians(&self) -> &[f64] {
        &self.boot_medians
    }

    pub fn initial_point(&self) -> Vec<f64> {
        vec![self.t_n]
    }

    pub fn score(&self, theta: f64) -> f64 {
        median_score(self.t_n - theta)
    }

    /// Bootstrap variance (divisor B) of `m_n^{(b)}(θ)/√n`.
    pub fn bootstrap_variance(&self, theta: f64) -> f64 {
        let root_n = (self.n as f64).sqrt();
        let b = self.boot_medians.len() as f64;
        let vals: Vec<f64> = self.boot_medians.iter().map(|t| median_score(t - theta) / root_n).collect();
        let mean = vals.iter().sum::<f64>() / b;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b
    }

    /// Unnormalised log density of a baseline posterior (flat prior).
    pub fn baseline_log_density(&self, theta: f64, kind: MedianPosterior) -> f64 {
        baseline_log_density(self.t_n, self.n, theta, kind)
    }
}

impl ScoreModel for MedianModel {
    fn dim(&self) -> usize {
        1
    }

    fn constraints(&self) -> Vec<Constraint> {
        vec![Constraint::Unbounded]
    }

    fn log_prior(&self, _: &[f64]) -> f64 {
        0.0
    }

    fn score_summary(&self, theta: &[f64]) -> Result<ScoreSummary> {
        let root_n = (self.n as f64).sqrt();
        let w = DMatrix::from_element(1, 1, self.bootstrap_variance(theta[0]));
        Ok(ScoreSummary {
            scaled_score: DVector::from_element(1, self.score(theta[0]) / root_n),
            weight: factorize_psd(&w)?,
        })
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ee_bootstrap_variance;
    use crate::models::{generate, DgpSpec, MedianDgp, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> Vec<f64> {
        generate(&DgpSpec::preset(ModelKind::Median), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().y
    }

    #[test]
    fn score_vanishes_at_sample_median() {
        let m = MedianModel::new(&data(1), 50, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(m.score(m.t_n()), 0.0);
    }

    #[test]
    fn score_is_monotone_through_the_median() {
        let m = MedianModel::new(&data(2), 50, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let grid: Vec<f64> = (0..=400).map(|k| m.t_n() - 2.0 + 0.01 * k as f64).collect();
        for w in grid.windows(2) {
            assert!(m.score(w[1]) > m.score(w[0]));
        }
        // f/F falls and f/(1 − F) rises in u = T_n − θ, so m_n increases in θ
        assert!(m.score(m.t_n() - 0.5) < 0.0 && m.score(m.t_n() + 0.5) > 0.0);
    }

    #[test]
    fn score_matches_density_ratio_form() {
        for &u in &[-2.5, -0.3, 0.0, 0.8, 3.0] {
            let (f, cdf) = (crate::special::normal_pdf(u), normal_cdf(u));
            let direct = 0.5 * f / cdf - 0.5 * f / (1.0 - cdf);
            assert!((median_score(u) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_equals_estimating_equations_bootstrap() {
        let y = data(3);
        let m = MedianModel::new(&y, 200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for theta in [0.2, 1.0, 1.7] {
            let score = |ys: &[f64], th: &[f64]| DVector::from_element(1, median_score(sample_median(ys) - th[0]));
            let w = ee_bootstrap_variance(score, &y, &[theta], 200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let ours = m.bootstrap_variance(theta);
            assert!((w.matrix()[(0, 0)] - ours).abs() < 1e-14 * ours.max(1e-300), "{ours}");
        }
    }

    #[test]
    fn weight_positive_across_prior_bulk() {
        let m = MedianModel::new(&data(4), 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for k in 0..=60 {
            let theta = -2.0 + 0.1 * k as f64;
            assert!(m.bootstrap_variance(theta) > 0.0, "theta {theta}");
        }
    }

    #[test]
    fn mixture_median_near_reported_value() {
        let med = mixture_median(1.0, 2.0);
        let cdf = 0.9 * normal_cdf((med - 1.0) / 2.0) + 0.1 * normal_cdf(med);
        assert!((cdf - 0.5).abs() < 1e-14);
        assert!((med - 0.84).abs() < 0.01, "{med}");
        let spec = DgpSpec { median_dgp: MedianDgp::Dgp2, ..DgpSpec::preset(ModelKind::Median) };
        assert_eq!(crate::models::pseudo_truth(&spec).unwrap().values, vec![med]);
    }

    #[test]
    fn generalized_posterior_curvature() {
        // near u = 0, (n/2) log F(1 − F) ≈ const − (n/π) u², so the variance
        // is π/(2n)
        let m = MedianModel::new(&data(5), 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let h = 1e-3;
        let t = m.t_n();
        let g = MedianPosterior::Generalized;
        let curv = (m.baseline_log_density(t + h, g) - 2.0 * m.baseline_log_density(t, g)
            + m.baseline_log_density(t - h, g))
            / (h * h);
        let var = -1.0 / curv;
        assert!((var - std::f64::consts::PI / (2.0 * 101.0)).abs() < 1e-5, "{var}");
    }
}
