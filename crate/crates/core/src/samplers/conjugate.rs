//! Closed-form Q-posterior for exponential families with a Gaussian prior on
//! the mean parameter.
//!
//! For `p(y | η) ∝ exp{ηᵀS(y) − A(η)}` the score is `Σ S(y_i) − n μ` with
//! `μ = g(η) = ∇A(η)`, and the sample covariance `W_n` of the `S(y_i)` does not
//! depend on η. With a `N(μ₀, W₀)` prior on μ the Q-posterior is Gaussian in
//! μ with
//!
//! ```text
//! A   = W_n/n + W₀
//! Σ   = n⁻¹ W₀ A⁻¹ W_n
//! b_n = W₀ A⁻¹ S̄ + n⁻¹ W_n A⁻¹ μ₀
//! ```
//!
//! Draws of η come from sampling μ̃ and solving `g(η) = μ̃`.

use crate::error::{QError, Result};
use crate::kernel::{ScoreModel, ScoreSummary};
use crate::panel::covariance_matrix;
use crate::params::Constraint;
use crate::weight::{factorize_psd, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Mean map `g(η) = ∇A(η)` and its inverse.
pub trait MeanMap: Sync {
    fn mean(&self, eta: &[f64]) -> Vec<f64>;
    /// `None` when μ lies outside the range of g.
    fn invert(&self, mu: &[f64]) -> Option<Vec<f64>>;
}

/// Gaussian with known unit variance: `g(η) = η`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianMean;

impl MeanMap for GaussianMean {
    fn mean(&self, eta: &[f64]) -> Vec<f64> {
        eta.to_vec()
    }

    fn invert(&self, mu: &[f64]) -> Option<Vec<f64>> {
        Some(mu.to_vec())
    }
}

/// Poisson (componentwise): `g(η) = exp(η)`, defined only for μ > 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonMean;

impl MeanMap for PoissonMean {
    fn mean(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter().map(|e| e.exp()).collect()
    }

    fn invert(&self, mu: &[f64]) -> Option<Vec<f64>> {
        mu.iter().all(|m| *m > 0.0).then(|| mu.iter().map(|m| m.ln()).collect())
    }
}

/// Location and covariance of the Gaussian Q-posterior for μ.
#[derive(Debug, Clone)]
pub struct ConjugateMoments {
    pub b_n: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ConjugateDraws {
    /// One draw of η per row.
    pub eta: DMatrix<f64>,
    pub moments: ConjugateMoments,
    /// μ̃ draws discarded because g could not be inverted.
    pub rejections: usize,
}

/// Upper bound on discarded μ̃ draws, per requested draw.
const MAX_REJECTIONS_PER_DRAW: usize = 1_000;

fn check_prior(d: usize, mu0: &DVector<f64>, w0: &DMatrix<f64>) -> Result<()> {
    if mu0.len() != d {
        return Err(QError::DimensionMismatch { expected: d, got: mu0.len() });
    }
    if w0.nrows() != d || w0.ncols() != d {
        return Err(QError::DimensionMismatch { expected: d, got: w0.nrows() });
    }
    Ok(())
}

/// Q-posterior moments for μ from the sufficient statistics (one row per
/// observation).
pub fn conjugate_moments(
    suff_stats: &DMatrix<f64>,
    mu0: &DVector<f64>,
    w0: &DMatrix<f64>,
) -> Result<ConjugateMoments> {
    let (n, d) = suff_stats.shape();
    check_prior(d, mu0, w0)?;
    let w_n = covariance_matrix(suff_stats)?;
    let nf = n as f64;
    let s_bar = suff_stats.row_mean().transpose();
    let a = &w_n / nf + w0;
    let lu = a.clone().lu();
    let a_inv = lu.try_inverse().ok_or_else(|| QError::SingularWeight { jitter: 0.0 })?;
    let sigma = w0 * &a_inv * &w_n / nf;
    let b_n = w0 * &a_inv * &s_bar + &w_n * &a_inv * mu0 / nf;
    // symmetrise away rounding before it reaches the Cholesky factor
    let sigma = 0.5 * (&sigma + sigma.transpose());
    Ok(ConjugateMoments { b_n, sigma })
}

/// Draws η from the conjugate Q-posterior.
pub fn conjugate_expfam_qposterior<G: MeanMap + ?Sized, R: Rng + ?Sized>(
    suff_stats: &DMatrix<f64>,
    mu0: &DVector<f64>,
    w0: &DMatrix<f64>,
    map: &G,
    draws: usize,
    rng: &mut R,
) -> Result<ConjugateDraws> {
    let moments = conjugate_moments(suff_stats, mu0, w0)?;
    let d = moments.b_n.len();
    let root: WeightMatrix = factorize_psd(&moments.sigma)?;
    let mut eta = DMatrix::zeros(draws, d);
    let mut rejections = 0usize;
    let limit = MAX_REJECTIONS_PER_DRAW * draws.max(1);
    let mut row = 0;
    while row < draws {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = &moments.b_n + root.color(&z);
        match map.invert(mu.as_slice()) {
            Some(e) => {
                eta.row_mut(row).copy_from_slice(&e);
                row += 1;
            }
            None => {
                rejections += 1;
                if rejections > limit {
                    return Err(QError::Estimation {
                        unit: 0,
                        reason: format!("mean map could not be inverted after {rejections} draws"),
                    });
                }
            }
        }
    }
    Ok(ConjugateDraws { eta, moments, rejections })
}

/// Q-posterior kernel of the same model in η-space: score `Σ S(y_i) − n g(η)`,
/// weight `W_n`, and the Gaussian prior evaluated at `μ = g(η)`.
#[derive(Debug, Clone)]
pub struct MeanParameterModel<G: MeanMap> {
    suff_stats: DMatrix<f64>,
    s_bar: DVector<f64>,
    weight: WeightMatrix,
    prior_mean: DVector<f64>,
    prior_precision: DMatrix<f64>,
    map: G,
}

impl<G: MeanMap> MeanParameterModel<G> {
    pub fn new(suff_stats: DMatrix<f64>, mu0: DVector<f64>, w0: &DMatrix<f64>, map: G) -> Result<Self> {
        let d = suff_stats.ncols();
        check_prior(d, &mu0, w0)?;
        let weight = factorize_psd(&covariance_matrix(&suff_stats)?)?;
        let prior_precision = w0
            .clone()
            .cholesky()
            .ok_or_else(|| QError::Config("prior covariance must be positive definite".into()))?
            .inverse();
        let s_bar = suff_stats.row_mean().transpose();
        Ok(Self { suff_stats, s_bar, weight, prior_mean: mu0, prior_precision, map })
    }

    pub fn suff_stats(&self) -> &DMatrix<f64> {
        &self.suff_stats
    }
}

impl<G: MeanMap> ScoreModel for MeanParameterModel<G> {
    fn dim(&self) -> usize {
        self.s_bar.len()
    }

    fn constraints(&self) -> Vec<Constraint> {
        vec![Constraint::Unbounded; self.dim()]
    }

    fn log_prior(&self, eta: &[f64]) -> f64 {
        let mu = DVector::from_vec(self.map.mean(eta));
        let r = mu - &self.prior_mean;
        -0.5 * (r.transpose() * &self.prior_precision * &r)[(0, 0)] - 0.5 * self.dim() as f64 * (2.0 * PI).ln()
    }

    fn score_summary(&self, eta: &[f64]) -> Result<ScoreSummary> {
        let n = self.suff_stats.nrows() as f64;
        let mu = DVector::from_vec(self.map.mean(eta));
        Ok(ScoreSummary { scaled_score: (&self.s_bar - mu) * n.sqrt(), weight: self.weight.clone() })
    }

    fn parameter_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|k| format!("eta{k}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{log_q_kernel, KernelOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_stats(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, j| 0.5 * j as f64 + 1.3 * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn moments_match_completed_square() {
        let s = gaussian_stats(60, 2, 1);
        let mu0 = DVector::from_vec(vec![0.3, -0.2]);
        let w0 = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.5]);
        let m = conjugate_moments(&s, &mu0, &w0).unwrap();
        // precision adds: n W_n⁻¹ + W₀⁻¹; mean is the precision-weighted average
        let n = 60.0;
        let wn = covariance_matrix(&s).unwrap();
        let wn_inv = wn.clone().try_inverse().unwrap();
        let w0_inv = w0.clone().try_inverse().unwrap();
        let prec = &wn_inv * n + &w0_inv;
        let cov = prec.clone().try_inverse().unwrap();
        let s_bar = s.row_mean().transpose();
        let mean = &cov * (&wn_inv * &s_bar * n + &w0_inv * &mu0);
        assert!((m.sigma - cov).abs().max() < 1e-10);
        assert!((m.b_n - mean).abs().max() < 1e-10);
    }

    #[test]
    fn diffuse_prior_limit() {
        let s = gaussian_stats(40, 1, 2);
        let w0 = DMatrix::from_element(1, 1, 1e12);
        let m = conjugate_moments(&s, &DVector::from_element(1, 5.0), &w0).unwrap();
        let wn = covariance_matrix(&s).unwrap()[(0, 0)];
        assert!((m.b_n[0] - s.mean()).abs() < 1e-9);
        assert!((m.sigma[(0, 0)] - wn / 40.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_log_kernel_is_the_conjugate_density() {
        // differences of the η-space kernel equal differences of N(b_n, Σ)
        let s = gaussian_stats(50, 1, 3);
        let mu0 = DVector::from_element(1, 0.0);
        let w0 = DMatrix::from_element(1, 1, 0.5);
        let m = conjugate_moments(&s, &mu0, &w0).unwrap();
        let model = MeanParameterModel::new(s, mu0, &w0, GaussianMean).unwrap();
        let opts = KernelOptions::default();
        let lk = |e: f64| log_q_kernel(&model, &[e], opts).unwrap().log_kernel;
        let dens = |e: f64| -0.5 * (e - m.b_n[0]).powi(2) / m.sigma[(0, 0)];
        for &e in &[-0.4, 0.1, 0.7] {
            assert!(((lk(e) - lk(0.0)) - (dens(e) - dens(0.0))).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_rejections_are_counted() {
        // mean near zero with a wide posterior forces some μ̃ ≤ 0
        let s = DMatrix::from_fn(8, 1, |i, _| if i < 7 { 0.0 } else { 1.0 });
        let d = conjugate_expfam_qposterior(
            &s,
            &DVector::from_element(1, 0.1),
            &DMatrix::from_element(1, 1, 1.0),
            &PoissonMean,
            2_000,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert!(d.rejections > 0);
        assert_eq!(d.eta.nrows(), 2_000);
        assert!(d.eta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn draw_moments() {
        let s = gaussian_stats(80, 1, 5);
        let d = conjugate_expfam_qposterior(
            &s,
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 2.0),
            &GaussianMean,
            50_000,
            &mut ChaCha8Rng::seed_from_u64(6),
        )
        .unwrap();
        let mean = d.eta.mean();
        let var = d.eta.variance();
        let sd = d.moments.sigma[(0, 0)].sqrt();
        assert!((mean - d.moments.b_n[0]).abs() < 4.0 * sd / 50_000f64.sqrt());
        assert!((var.sqrt() / sd - 1.0).abs() < 0.02);
        assert_eq!(d.rejections, 0);
    }
}
