//! Linear regression with a Gaussian random intercept per unit:
//! `y_i = α_i + x_iᵀβ + σ ε_i`, `α_i ~ N(0, σ²_α)`.
//!
//! θ = (β, σ²) with σ²_α known, or θ = (β, σ², σ²_α) when it is estimated.

use crate::error::{QError, Result};
use crate::estimators::{LatentDrawSet, LatentModel};
use crate::models::linreg::{ols, sigma2_log_prior, OlsFit};
use crate::models::{beta_names, Dataset};
use crate::params::Constraint;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct LinearRandomEffects {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sigma2_alpha: f64,
    estimate_sigma2_alpha: bool,
    fit: OlsFit,
}

impl LinearRandomEffects {
    /// `sigma2_alpha` is the known random-effect variance, or the starting
    /// value when `estimate_sigma2_alpha` is set.
    pub fn new(data: &Dataset, sigma2_alpha: f64, estimate_sigma2_alpha: bool) -> Result<Self> {
        if !(sigma2_alpha.is_finite() && sigma2_alpha > 0.0) {
            return Err(QError::Config("sigma2_alpha must be positive".into()));
        }
        let x = data.design()?.clone();
        let y = DVector::from_column_slice(&data.y);
        if y.len() < x.ncols() + 2 {
            return Err(QError::InsufficientData { needed: x.ncols() + 2, got: y.len() });
        }
        let fit = ols(&x, &y)?;
        Ok(Self { x, y, sigma2_alpha, estimate_sigma2_alpha, fit })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_beta(&self) -> usize {
        self.x.ncols()
    }

    pub fn ols(&self) -> &OlsFit {
        &self.fit
    }

    pub fn estimates_sigma2_alpha(&self) -> bool {
        self.estimate_sigma2_alpha
    }

    pub fn fixed_sigma2_alpha(&self) -> f64 {
        self.sigma2_alpha
    }

    /// (σ², σ²_α) at θ.
    #[inline]
    pub fn variances(&self, theta: &[f64]) -> (f64, f64) {
        let p = self.n_beta();
        let s2a = if self.estimate_sigma2_alpha { theta[p + 1] } else { self.sigma2_alpha };
        (theta[p], s2a)
    }

    #[inline]
    fn resid(&self, theta: &[f64], i: usize) -> f64 {
        self.y[i] - (0..self.n_beta()).map(|k| self.x[(i, k)] * theta[k]).sum::<f64>()
    }

    /// Mean and variance of `α_i | y, θ`: shrinkage `s = σ²_α/(σ² + σ²_α)`
    /// applied to the residual, variance `σ² s`.
    pub fn conditional_moments(&self, theta: &[f64], unit: usize) -> (f64, f64) {
        let (s2, s2a) = self.variances(theta);
        let shrink = 1.0 / (1.0 + s2 / s2a);
        (shrink * self.resid(theta, unit), s2 * shrink)
    }

    /// OLS coefficients, with the OLS residual variance split between σ² and
    /// σ²_α.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.fit.beta.iter().copied().collect();
        if self.estimate_sigma2_alpha {
            v.push(0.5 * self.fit.sigma2);
            v.push(0.5 * self.fit.sigma2);
        } else {
            v.push((self.fit.sigma2 - self.sigma2_alpha).max(0.1 * self.fit.sigma2));
        }
        v
    }

    /// Complete-data log density of unit `i` at latent value `alpha`.
    pub fn complete_log_density(&self, theta: &[f64], unit: usize, alpha: f64) -> f64 {
        let (s2, s2a) = self.variances(theta);
        let r = self.resid(theta, unit) - alpha;
        -0.5 * (2.0 * PI * s2).ln() - 0.5 * r * r / s2 - 0.5 * (2.0 * PI * s2a).ln() - 0.5 * alpha * alpha / s2a
    }

    /// Exact observed-data score: `y_i ~ N(x_iᵀβ, σ² + σ²_α)`.
    pub fn marginal_score(&self, theta: &[f64]) -> DVector<f64> {
        let p = self.n_beta();
        let (s2, s2a) = self.variances(theta);
        let v = s2 + s2a;
        let mut out = DVector::zeros(LatentModel::dim(self));
        for i in 0..self.y.len() {
            let r = self.resid(theta, i);
            for k in 0..p {
                out[k] += self.x[(i, k)] * r / v;
            }
            let g = -0.5 / v + 0.5 * r * r / (v * v);
            out[p] += g;
            if self.estimate_sigma2_alpha {
                out[p + 1] += g;
            }
        }
        out
    }
}

impl LatentModel for LinearRandomEffects {
    fn preliminary_estimate(&self) -> Option<Vec<f64>> {
        Some(self.initial_point())
    }

    fn dim(&self) -> usize {
        self.n_beta() + 1 + usize::from(self.estimate_sigma2_alpha)
    }

    fn constraints(&self) -> Vec<Constraint> {
        let mut c = vec![Constraint::Unbounded; self.n_beta()];
        c.push(Constraint::StrictlyPositive);
        if self.estimate_sigma2_alpha {
            c.push(Constraint::StrictlyPositive);
        }
        c
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let p = self.n_beta();
        let mut lp = sigma2_log_prior(theta[p]);
        if self.estimate_sigma2_alpha {
            lp -= theta[p + 1].ln();
        }
        lp
    }

    fn n_units(&self) -> usize {
        self.y.len()
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn draw_latents<R: Rng + ?Sized>(&self, theta: &[f64], n_draws: usize, rng: &mut R) -> Result<LatentDrawSet> {
        let n = self.y.len();
        let moments: Vec<(f64, f64)> = (0..n).map(|i| self.conditional_moments(theta, i)).collect();
        let mut draws = Vec::with_capacity(n_draws * n);
        for _ in 0..n_draws {
            for &(m, v) in &moments {
                let z: f64 = rng.sample(StandardNormal);
                draws.push(m + v.sqrt() * z);
            }
        }
        Ok(LatentDrawSet { n_draws, n_units: n, latent_dim: 1, draws, burn_in: 0, inner_acceptance: None })
    }

    fn complete_unit_score(&self, theta: &[f64], unit: usize, alpha: &[f64], out: &mut [f64]) {
        let p = self.n_beta();
        let (s2, s2a) = self.variances(theta);
        let a = alpha[0];
        let r = self.resid(theta, unit) - a;
        for k in 0..p {
            out[k] = self.x[(unit, k)] * r / s2;
        }
        out[p] = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
        if self.estimate_sigma2_alpha {
            out[p + 1] = -0.5 / s2a + 0.5 * a * a / (s2a * s2a);
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut v = beta_names(self.n_beta());
        v.push("sigma2".into());
        if self.estimate_sigma2_alpha {
            v.push("sigma2_alpha".into());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fisher_score, WithinWeight};
    use crate::models::{generate, DgpSpec, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> Dataset {
        generate(&DgpSpec::preset(ModelKind::LinRe), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn conditional_mean_matches_shrinkage_formula() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, -2.0]);
        let d = Dataset::new(vec![3.0, -1.0], Some(x)).unwrap();
        // n too small for the constructor's OLS guard; build directly
        let m = LinearRandomEffects {
            fit: OlsFit {
                beta: DVector::zeros(2),
                sigma2: 1.0,
                xtx: DMatrix::identity(2, 2),
                xtx_inv: DMatrix::identity(2, 2),
            },
            x: d.x.clone().unwrap(),
            y: DVector::from_column_slice(&d.y),
            sigma2_alpha: 2.0,
            estimate_sigma2_alpha: false,
        };
        let theta = [0.4, 1.2, 0.5];
        // {1 + σ²/σ²_α}⁻¹ (y − xβ) with σ² = 0.5, σ²_α = 2 → factor 0.8
        let r0 = 3.0 - (0.4 + 0.6);
        let (m0, v0) = m.conditional_moments(&theta, 0);
        assert!((m0 - 0.8 * r0).abs() < 1e-15);
        assert!((v0 - 0.5 * 0.8).abs() < 1e-15);
        let r1 = -1.0 - (0.4 - 2.4);
        assert!((m.conditional_moments(&theta, 1).0 - 0.8 * r1).abs() < 1e-15);
    }

    #[test]
    fn shrinkage_limits() {
        let d = data(1);
        let theta = [0.5, 1.5, 1.0, 1.0, 1.0];
        let wide = LinearRandomEffects::new(&d, 1e12, false).unwrap();
        let r = wide.resid(&theta, 0);
        assert!((wide.conditional_moments(&theta, 0).0 - r).abs() < 1e-9);
        let tight = LinearRandomEffects::new(&d, 1e-12, false).unwrap();
        assert!(tight.conditional_moments(&theta, 0).0.abs() < 1e-9);
    }

    #[test]
    fn complete_scores_match_central_differences() {
        for est in [false, true] {
            let m = LinearRandomEffects::new(&data(2), 1.0, est).unwrap();
            let mut theta = vec![0.3, 1.2, 0.8, 1.1, 1.4];
            if est {
                theta.push(0.7);
            }
            let mut out = vec![0.0; theta.len()];
            for (unit, alpha) in [(0usize, 0.3), (7, -1.2), (42, 2.0)] {
                m.complete_unit_score(&theta, unit, &[alpha], &mut out);
                for k in 0..theta.len() {
                    let h = 1e-6;
                    let (mut up, mut dn) = (theta.clone(), theta.clone());
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (m.complete_log_density(&up, unit, alpha) - m.complete_log_density(&dn, unit, alpha))
                        / (2.0 * h);
                    assert!((out[k] - fd).abs() / fd.abs().max(1.0) < 1e-6, "k={k} {} vs {fd}", out[k]);
                }
            }
        }
    }

    #[test]
    fn single_draw_estimate_is_the_complete_score() {
        let m = LinearRandomEffects::new(&data(3), 1.0, false).unwrap();
        let theta = [0.5, 1.5, 1.0, 1.0, 1.0];
        let est = fisher_score(&m, &theta, 1, WithinWeight::PerDraw, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let lat = m.draw_latents(&theta, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut total = vec![0.0; 5];
        let mut row = vec![0.0; 5];
        for i in 0..m.n_units() {
            m.complete_unit_score(&theta, i, lat.get(0, i), &mut row);
            for k in 0..5 {
                total[k] += row[k];
            }
        }
        for k in 0..5 {
            assert!((est.m_hat[k] - total[k]).abs() < 1e-12 * total[k].abs().max(1.0));
        }
    }

    #[test]
    fn fisher_identity_recovers_marginal_score() {
        for est in [false, true] {
            let m = LinearRandomEffects::new(&data(4), 1.0, est).unwrap();
            let mut theta = vec![0.3, 1.7, 0.9, 1.2, 0.8];
            if est {
                theta.push(1.3);
            }
            let d = theta.len();
            let nd = 400;
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let e = fisher_score(&m, &theta, nd, WithinWeight::PerDraw, &mut rng).unwrap();
            let exact = m.marginal_score(&theta);
            // MC standard error from the spread of per-draw totals
            let draws = e.panel.draw_scores().unwrap();
            for k in 0..d {
                let totals: Vec<f64> =
                    (0..nd).map(|j| (0..m.n_units()).map(|i| draws.get(j, i)[k]).sum()).collect();
                let mean = totals.iter().sum::<f64>() / nd as f64;
                let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (nd - 1) as f64;
                let se = (var / nd as f64).sqrt();
                assert!((e.m_hat[k] - mean).abs() < 1e-9 * mean.abs().max(1.0));
                assert!((e.m_hat[k] - exact[k]).abs() < 3.0 * se, "k={k}: {} vs {} (se {se})", e.m_hat[k], exact[k]);
            }
        }
    }
}
