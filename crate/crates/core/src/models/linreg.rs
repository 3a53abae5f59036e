//! Gaussian linear regression, θ = (β, σ²).

use crate::error::{QError, Result};
use crate::estimators::UnitScoreModel;
use crate::kernel::{ScoreModel, ScoreSummary};
use crate::models::{beta_names, Dataset};
use crate::panel::{sample_covariance, ScorePanel};
use crate::params::Constraint;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::f64::consts::PI;

/// Log prior on σ² implied by `π(σ) ∝ (σ²)^{-2}`: the Jacobian of σ ↦ σ²
/// adds a further `-½ log σ²`.
pub fn sigma2_log_prior(sigma2: f64) -> f64 {
    -2.5 * sigma2.ln()
}

/// OLS fit of `y` on the columns of `x`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// Residual sum of squares divided by n (the Gaussian MLE of σ²).
    pub sigma2: f64,
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
}

/// Cholesky factor of `XᵀX`, rejecting numerically rank-deficient designs
/// whose pivots collapse relative to the diagonal.
pub(crate) fn cross_product_cholesky(xtx: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let singular = || QError::SingularDesign("XᵀX is not positive definite".into());
    let chol = xtx.clone().cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    if (0..xtx.nrows()).any(|k| l[(k, k)] * l[(k, k)] <= 1e-10 * xtx[(k, k)]) {
        return Err(singular());
    }
    Ok(chol)
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let xtx = x.tr_mul(x);
    let chol = cross_product_cholesky(&xtx)?;
    let beta = chol.solve(&x.tr_mul(y));
    let resid = y - x * &beta;
    let sigma2 = resid.norm_squared() / y.len() as f64;
    Ok(OlsFit { beta, sigma2, xtx_inv: chol.inverse(), xtx })
}

#[derive(Debug, Clone)]
pub struct LinearRegression {
    x: DMatrix<f64>,
    y: DVector<f64>,
    fit: OlsFit,
}

impl LinearRegression {
    pub fn new(data: &Dataset) -> Result<Self> {
        let x = data.design()?.clone();
        let y = DVector::from_column_slice(&data.y);
        if y.len() < x.ncols() + 2 {
            return Err(QError::InsufficientData { needed: x.ncols() + 2, got: y.len() });
        }
        let fit = ols(&x, &y)?;
        Ok(Self { x, y, fit })
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

    /// OLS coefficients followed by the MLE of σ².
    pub fn initial_point(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.fit.beta.iter().copied().collect();
        v.push(self.fit.sigma2);
        v
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let p = self.n_beta();
        let s2 = theta[p];
        let beta = DVector::from_column_slice(&theta[..p]);
        let ssr = (&self.y - &self.x * beta).norm_squared();
        let n = self.y.len() as f64;
        -0.5 * n * (2.0 * PI * s2).ln() - 0.5 * ssr / s2
    }

    /// Per-observation Gaussian log-likelihood gradients.
    pub fn score_panel(&self, theta: &[f64]) -> Result<ScorePanel> {
        let (n, p) = (self.y.len(), self.n_beta());
        let s2 = theta[p];
        let mut rows = DMatrix::<f64>::zeros(n, p + 1);
        for i in 0..n {
            let mut fitted = 0.0;
            for k in 0..p {
                fitted += self.x[(i, k)] * theta[k];
            }
            let r = self.y[i] - fitted;
            for k in 0..p {
                rows[(i, k)] = self.x[(i, k)] * r / s2;
            }
            rows[(i, p)] = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
        }
        ScorePanel::new(rows)
    }
}

impl ScoreModel for LinearRegression {
    fn dim(&self) -> usize {
        self.n_beta() + 1
    }

    fn constraints(&self) -> Vec<Constraint> {
        let mut c = vec![Constraint::Unbounded; self.n_beta()];
        c.push(Constraint::StrictlyPositive);
        c
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        sigma2_log_prior(theta[self.n_beta()])
    }

    fn score_summary(&self, theta: &[f64]) -> Result<ScoreSummary> {
        let panel = self.score_panel(theta)?;
        Ok(ScoreSummary { scaled_score: panel.scaled_total(), weight: sample_covariance(&panel)? })
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut v = beta_names(self.n_beta());
        v.push("sigma2".into());
        v
    }
}

impl UnitScoreModel for LinearRegression {
    fn dim(&self) -> usize {
        self.n_beta() + 1
    }
    fn constraints(&self) -> Vec<Constraint> {
        ScoreModel::constraints(self)
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        ScoreModel::log_prior(self, theta)
    }
    fn n_units(&self) -> usize {
        self.y.len()
    }
    fn unit_score(&self, theta: &[f64], unit: usize, out: &mut [f64]) {
        let p = self.n_beta();
        let s2 = theta[p];
        let r = self.y[unit] - (0..p).map(|k| self.x[(unit, k)] * theta[k]).sum::<f64>();
        for k in 0..p {
            out[k] = self.x[(unit, k)] * r / s2;
        }
        out[p] = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
    }
    fn parameter_names(&self) -> Vec<String> {
        ScoreModel::parameter_names(self)
    }
}
