//! Binary probit with a Gaussian random intercept (one observation per unit):
//! `P(y_i = 1 | α_i) = Φ(x_iᵀβ + α_i)`, `α_i ~ N(0, σ²_α)`.
//!
//! θ = β with σ²_α known, or θ = (β, σ²_α).

use crate::error::{QError, Result};
use crate::estimators::{LatentDrawSet, LatentModel};
use crate::models::{beta_names, Dataset, DgpSpec, LatentDist};
use crate::params::Constraint;
use crate::special::{
    log_normal_pdf, mills_ratio, normal_cdf, normal_pdf, normal_quantile, probit_log_lik, probit_score_factor,
    student_t4_quantile,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct ProbitRandomEffects {
    x: DMatrix<f64>,
    y: Vec<bool>,
    sigma2_alpha: f64,
    estimate_sigma2_alpha: bool,
}

impl ProbitRandomEffects {
    pub fn new(data: &Dataset, sigma2_alpha: f64, estimate_sigma2_alpha: bool) -> Result<Self> {
        if !data.is_binary() {
            return Err(QError::Config("probit outcomes must be 0 or 1".into()));
        }
        if !(sigma2_alpha.is_finite() && sigma2_alpha > 0.0) {
            return Err(QError::Config("sigma2_alpha must be positive".into()));
        }
        let x = data.design()?.clone();
        let y = data.y.iter().map(|&v| v == 1.0).collect();
        Ok(Self { x, y, sigma2_alpha, estimate_sigma2_alpha })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn n_beta(&self) -> usize {
        self.x.ncols()
    }

    pub fn estimates_sigma2_alpha(&self) -> bool {
        self.estimate_sigma2_alpha
    }

    pub fn fixed_sigma2_alpha(&self) -> f64 {
        self.sigma2_alpha
    }

    #[inline]
    pub fn sigma2_alpha(&self, theta: &[f64]) -> f64 {
        if self.estimate_sigma2_alpha {
            theta[self.n_beta()]
        } else {
            self.sigma2_alpha
        }
    }

    /// Linear index `x_iᵀβ` without the random effect.
    #[inline]
    pub fn index(&self, theta: &[f64], unit: usize) -> f64 {
        (0..self.n_beta()).map(|k| self.x[(unit, k)] * theta[k]).sum()
    }

    /// Maximum likelihood for the marginal probit `P(y = 1 | x) = Φ(xᵀb)` by
    /// Fisher scoring, mapped back to β = b √(1 + σ²_α). `None` when the
    /// iterations do not settle (e.g. separated data).
    pub fn marginal_mle(&self) -> Option<Vec<f64>> {
        let (n, p) = self.x.shape();
        let mut b = nalgebra::DVector::<f64>::zeros(p);
        for _ in 0..MLE_MAX_ITER {
            let mut score = nalgebra::DVector::<f64>::zeros(p);
            let mut info = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let xi = self.x.row(i).transpose();
                let eta = xi.dot(&b);
                score += &xi * probit_score_factor(self.y[i], eta);
                info += &xi * xi.transpose() * (mills_ratio(eta) * mills_ratio(-eta));
            }
            let step = info.cholesky()?.solve(&score);
            b += &step;
            if !b.iter().all(|v| v.is_finite()) || b.amax() > MLE_MAX_COEF {
                return None;
            }
            if step.amax() < 1e-10 * (1.0 + b.amax()) {
                let scale = (1.0 + self.sigma2_alpha).sqrt();
                let mut v: Vec<f64> = b.iter().map(|c| c * scale).collect();
                if self.estimate_sigma2_alpha {
                    v.push(self.sigma2_alpha);
                }
                return Some(v);
            }
        }
        None
    }

    /// β = 0, with σ²_α at its configured value when estimated.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_beta()];
        if self.estimate_sigma2_alpha {
            v.push(self.sigma2_alpha);
        }
        v
    }

    pub fn complete_log_density(&self, theta: &[f64], unit: usize, alpha: f64) -> f64 {
        let s2a = self.sigma2_alpha(theta);
        probit_log_lik(self.y[unit], self.index(theta, unit) + alpha) + log_normal_pdf(alpha / s2a.sqrt())
            - 0.5 * s2a.ln()
    }

    /// Log acceptance ratio of the independence sampler with proposal equal to
    /// the latent prior: the prior terms cancel, leaving the likelihood ratio.
    #[inline]
    pub fn inner_log_ratio(&self, unit: usize, eta: f64, alpha_from: f64, alpha_to: f64) -> f64 {
        probit_log_lik(self.y[unit], eta + alpha_to) - probit_log_lik(self.y[unit], eta + alpha_from)
    }
}

const MLE_MAX_ITER: usize = 100;
/// Coefficients this large signal separation rather than a finite maximiser.
const MLE_MAX_COEF: f64 = 50.0;

impl LatentModel for ProbitRandomEffects {
    fn preliminary_estimate(&self) -> Option<Vec<f64>> {
        self.marginal_mle()
    }

    fn dim(&self) -> usize {
        self.n_beta() + usize::from(self.estimate_sigma2_alpha)
    }

    fn constraints(&self) -> Vec<Constraint> {
        let mut c = vec![Constraint::Unbounded; self.n_beta()];
        if self.estimate_sigma2_alpha {
            c.push(Constraint::StrictlyPositive);
        }
        c
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.estimate_sigma2_alpha {
            -theta[self.n_beta()].ln()
        } else {
            0.0
        }
    }

    fn n_units(&self) -> usize {
        self.y.len()
    }

    fn latent_dim(&self) -> usize {
        1
    }

    /// Independence Metropolis-Hastings per unit with proposal `N(0, σ²_α)`:
    /// `2N` iterations from a prior draw, the first `N` discarded.
    fn draw_latents<R: Rng + ?Sized>(&self, theta: &[f64], n_draws: usize, rng: &mut R) -> Result<LatentDrawSet> {
        let n = self.y.len();
        let sd = self.sigma2_alpha(theta).sqrt();
        let mut draws = vec![0.0; n_draws * n];
        let mut accepted = 0usize;
        for i in 0..n {
            let eta = self.index(theta, i);
            let y = self.y[i];
            let mut alpha = sd * rng.sample::<f64, _>(StandardNormal);
            let mut ll = probit_log_lik(y, eta + alpha);
            for t in 0..2 * n_draws {
                let prop = sd * rng.sample::<f64, _>(StandardNormal);
                let ll_prop = probit_log_lik(y, eta + prop);
                if rng.random::<f64>().ln() < ll_prop - ll {
                    alpha = prop;
                    ll = ll_prop;
                    accepted += 1;
                }
                if t >= n_draws {
                    draws[(t - n_draws) * n + i] = alpha;
                }
            }
        }
        let inner_acceptance = Some(accepted as f64 / (2 * n_draws * n).max(1) as f64);
        Ok(LatentDrawSet { n_draws, n_units: n, latent_dim: 1, draws, burn_in: n_draws, inner_acceptance })
    }

    fn complete_unit_score(&self, theta: &[f64], unit: usize, alpha: &[f64], out: &mut [f64]) {
        let p = self.n_beta();
        let a = alpha[0];
        let u = probit_score_factor(self.y[unit], self.index(theta, unit) + a);
        for k in 0..p {
            out[k] = self.x[(unit, k)] * u;
        }
        if self.estimate_sigma2_alpha {
            let s2a = theta[p];
            out[p] = -0.5 / s2a + 0.5 * a * a / (s2a * s2a);
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut v = beta_names(self.n_beta());
        if self.estimate_sigma2_alpha {
            v.push("sigma2_alpha".into());
        }
        v
    }
}

const PT_INDEX_NODES: usize = 2000;
const PT_LATENT_NODES: usize = 800;

/// Kullback-Leibler minimising β for the fitted probit when the data come
/// from `spec`.
///
/// With σ²_α known, the fitted model implies `P(y = 1 | x) = Φ(xᵀb / √(1 + σ²_α))`.
/// The covariates are iid Gaussian, so the minimiser keeps the slopes
/// proportional to the true slopes and the problem reduces to an intercept
/// and a scale factor, fitted by Fisher scoring on quadrature nodes for the
/// true index distribution. When σ²_α is estimated the single-observation
/// probit only identifies `β / √(1 + σ²_α)`; β itself is returned.
pub fn pseudo_true_beta(spec: &DgpSpec) -> Result<Vec<f64>> {
    if spec.estimate_sigma2_alpha {
        return Ok(spec.beta.clone());
    }
    let off = usize::from(spec.intercept);
    let b0 = if spec.intercept { spec.beta[0] } else { 0.0 };
    let slopes = &spec.beta[off..];
    let tau = slopes.iter().map(|b| b * b).sum::<f64>().sqrt();
    if tau == 0.0 {
        return Ok(spec.beta.clone());
    }
    let scale = spec.sigma2_alpha.sqrt();
    let latent: Vec<f64> = (0..PT_LATENT_NODES)
        .map(|k| {
            let p = (k as f64 + 0.5) / PT_LATENT_NODES as f64;
            scale
                * match spec.latent_dist {
                    LatentDist::Gaussian => normal_quantile(p),
                    LatentDist::StudentT4 => student_t4_quantile(p),
                }
        })
        .collect();
    let v: Vec<f64> =
        (0..PT_INDEX_NODES).map(|k| tau * normal_quantile((k as f64 + 0.5) / PT_INDEX_NODES as f64)).collect();
    let prob: Vec<f64> = v
        .iter()
        .map(|&vk| latent.iter().map(|a| normal_cdf(b0 + vk + a)).sum::<f64>() / PT_LATENT_NODES as f64)
        .collect();

    let kappa = 1.0 / (1.0 + spec.sigma2_alpha).sqrt();
    let (mut a, mut c) = (b0, 1.0);
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (vk, pk) in v.iter().zip(&prob) {
            let t = kappa * (a + c * vk);
            let g = pk * mills_ratio(t) - (1.0 - pk) * mills_ratio(-t);
            let f = normal_pdf(t);
            let info = f * f / (normal_cdf(t) * normal_cdf(-t));
            g0 += kappa * g;
            g1 += kappa * g * vk;
            h00 += kappa * kappa * info;
            h01 += kappa * kappa * info * vk;
            h11 += kappa * kappa * info * vk * vk;
        }
        let (da, dc) = if spec.intercept {
            let det = h00 * h11 - h01 * h01;
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        } else {
            (0.0, g1 / h11)
        };
        if !(da.is_finite() && dc.is_finite()) {
            return Err(QError::NonFinite("pseudo-truth iteration"));
        }
        a += da;
        c += dc;
        if da.abs().max(dc.abs()) < 1e-13 {
            break;
        }
    }
    let mut out = Vec::with_capacity(spec.beta.len());
    if spec.intercept {
        out.push(a);
    }
    out.extend(slopes.iter().map(|s| c * s));
    Ok(out)
}
