//! Exact-posterior Gibbs samplers under the flat β prior,
//! `π(σ) ∝ (σ²)^{-2}` and `π(σ²_α) ∝ 1/σ²_α`.
//!
//! Every draw is accepted. `log_kernels` holds the observed-data log
//! posterior (up to a constant), which is closed-form for all three models.

use super::rwmh::check_lengths;
use super::truncnorm::truncated_normal;
use super::ChainTrace;
use crate::error::{QError, Result};
use crate::estimators::LatentModel;
use crate::kernel::ScoreModel;
use crate::models::linreg::{cross_product_cholesky, sigma2_log_prior};
use crate::models::{LinearRandomEffects, LinearRegression, ProbitRandomEffects};
use crate::special::log_normal_cdf;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::f64::consts::PI;

/// Draw from the inverse gamma with the given shape and rate.
fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| QError::Config(format!("inverse gamma (shape {shape}, rate {rate}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Normal linear-model draws `N((XᵀX)⁻¹Xᵀt, c (XᵀX)⁻¹)` for varying targets `t`.
struct Projector {
    x: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Lower factor of (XᵀX)⁻¹.
    root: DMatrix<f64>,
}

impl Projector {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        let chol = cross_product_cholesky(&x.tr_mul(x))?;
        let root = chol
            .inverse()
            .cholesky()
            .ok_or_else(|| QError::SingularDesign("(XᵀX)⁻¹ is not positive definite".into()))?
            .l();
        Ok(Self { x: x.clone(), chol, root })
    }

    fn draw<R: Rng + ?Sized>(&self, target: &DVector<f64>, scale: f64, rng: &mut R) -> DVector<f64> {
        let mean = self.chol.solve(&self.x.tr_mul(target));
        let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        mean + scale.sqrt() * (&self.root * z)
    }
}

fn gaussian_loglik(resid: &DVector<f64>, var: f64) -> f64 {
    let n = resid.len() as f64;
    -0.5 * n * (2.0 * PI * var).ln() - 0.5 * resid.norm_squared() / var
}

/// Two-block Gibbs for θ = (β, σ²): `σ² | β ~ IG(n/2 + 3/2, SSR(β)/2)` and
/// `β | σ² ~ N(β̂, σ²(XᵀX)⁻¹)`.
pub fn gibbs_exact_linreg<R: Rng + ?Sized>(
    model: &LinearRegression,
    iterations: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_lengths(iterations, burn_in)?;
    let (x, y) = (model.x(), model.y());
    let n = y.len() as f64;
    let p = model.n_beta();
    let proj = Projector::new(x)?;
    let mut beta = model.ols().beta.clone();
    let mut trace = ChainTrace::with_capacity(p + 1, iterations, burn_in);
    let mut theta = vec![0.0; p + 1];
    for _ in 0..iterations {
        let resid = y - x * &beta;
        let s2 = inverse_gamma(0.5 * n + 1.5, 0.5 * resid.norm_squared(), rng)?;
        beta = proj.draw(y, s2, rng);
        theta[..p].copy_from_slice(beta.as_slice());
        theta[p] = s2;
        let lk = gaussian_loglik(&(y - x * &beta), s2) + sigma2_log_prior(s2);
        trace.push(&theta, lk, true);
    }
    trace.kernel_evaluations = iterations;
    Ok(trace.finish().with_names(ScoreModel::parameter_names(model)))
}

/// Gibbs over (α, β, σ²[, σ²_α]) using the closed-form conditional of each
/// random intercept. Only θ is recorded.
pub fn gibbs_exact_lin_re<R: Rng + ?Sized>(
    model: &LinearRandomEffects,
    iterations: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_lengths(iterations, burn_in)?;
    let (x, y) = (model.x(), model.y());
    let n = y.len();
    let p = model.n_beta();
    let est = model.estimates_sigma2_alpha();
    let proj = Projector::new(x)?;
    let mut theta = model.initial_point();
    let mut alpha = DVector::zeros(n);
    let mut trace = ChainTrace::with_capacity(theta.len(), iterations, burn_in);
    for _ in 0..iterations {
        for i in 0..n {
            let (m, v) = model.conditional_moments(&theta, i);
            alpha[i] = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let s2 = theta[p];
        let beta = proj.draw(&(y - &alpha), s2, rng);
        theta[..p].copy_from_slice(beta.as_slice());
        let resid = y - x * &beta - &alpha;
        theta[p] = inverse_gamma(0.5 * n as f64 + 1.5, 0.5 * resid.norm_squared(), rng)?;
        if est {
            theta[p + 1] = inverse_gamma(0.5 * n as f64, 0.5 * alpha.norm_squared(), rng)?;
        }
        let (s2, s2a) = model.variances(&theta);
        let lk = gaussian_loglik(&(y - x * &beta), s2 + s2a) + model.log_prior(&theta);
        trace.push(&theta, lk, true);
    }
    trace.kernel_evaluations = iterations;
    Ok(trace.finish().with_names(model.parameter_names()))
}

/// Probit random-intercept posterior by data augmentation with latent
/// utilities `u_i` (sign matching `y_i`).
///
/// With σ²_α known the intercepts are integrated out, so
/// `u | β ~ TN(Xβ, 1 + σ²_α)` and `β | u ~ N((XᵀX)⁻¹Xᵀu, (1 + σ²_α)(XᵀX)⁻¹)`.
/// With σ²_α estimated the sweep is u, α, β, σ²_α.
pub fn gibbs_exact_probit_re<R: Rng + ?Sized>(
    model: &ProbitRandomEffects,
    iterations: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_lengths(iterations, burn_in)?;
    let x = model.x();
    let ys = model.y();
    let n = ys.len();
    let p = model.n_beta();
    let est = model.estimates_sigma2_alpha();
    let proj = Projector::new(x)?;
    let mut theta = model.initial_point();
    let mut beta = DVector::from_column_slice(&theta[..p]);
    let mut u = DVector::zeros(n);
    let mut alpha = DVector::<f64>::zeros(n);
    let mut trace = ChainTrace::with_capacity(theta.len(), iterations, burn_in);
    for _ in 0..iterations {
        let s2a = model.sigma2_alpha(&theta);
        let eta = x * &beta;
        if est {
            for i in 0..n {
                u[i] = truncated_normal(eta[i] + alpha[i], 1.0, 0.0, ys[i], rng);
            }
            let shrink = s2a / (1.0 + s2a);
            for i in 0..n {
                alpha[i] = shrink * (u[i] - eta[i]) + shrink.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            beta = proj.draw(&(&u - &alpha), 1.0, rng);
            theta[p] = inverse_gamma(0.5 * n as f64, 0.5 * alpha.norm_squared(), rng)?;
        } else {
            let sd = (1.0 + s2a).sqrt();
            for i in 0..n {
                u[i] = truncated_normal(eta[i], sd, 0.0, ys[i], rng);
            }
            beta = proj.draw(&u, 1.0 + s2a, rng);
        }
        theta[..p].copy_from_slice(beta.as_slice());
        let lk = probit_marginal_loglik(model, &theta) + model.log_prior(&theta);
        trace.push(&theta, lk, true);
    }
    trace.kernel_evaluations = iterations;
    Ok(trace.finish().with_names(model.parameter_names()))
}

/// `Σ log Φ(±x_iᵀβ/√(1 + σ²_α))`.
pub fn probit_marginal_loglik(model: &ProbitRandomEffects, theta: &[f64]) -> f64 {
    let kappa = 1.0 / (1.0 + model.sigma2_alpha(theta)).sqrt();
    model
        .y()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let t = kappa * model.index(theta, i);
            log_normal_cdf(if y { t } else { -t })
        })
        .sum()
}
