//! Brute-force oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use qposterior::estimators::{fisher_score, NoLatent, WithinWeight};
use qposterior::kernel::KernelOptions;
use qposterior::models::{generate, DgpSpec, LinearRandomEffects, LinearRegression, ModelKind};
use qposterior::panel::covariance_matrix;
use qposterior::samplers::{pm_mh_q, rwmh_q, PmOptions, ProposalConfig};
use qposterior::summary::{batch_means_se, mean_var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn frobenius_rel(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm()
}

/// Law-of-total-variance oracle on the linear random-effects model: the
/// average `w_total` over independent regenerations of the data and the
/// latent draws, and the empirical covariance of the unit means `m̄_iN` pooled
/// over the same regenerations.
pub fn variance_split_oracle(n: usize, n_draws: usize, regenerations: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut spec = DgpSpec::preset(ModelKind::LinRe);
    spec.n = n;
    // pseudo-true θ: error variance σ²(1 + |x|⁰) = 2σ² at γ = 0
    let mut theta = spec.beta.clone();
    theta.push(2.0 * spec.sigma * spec.sigma);
    let d = theta.len();
    let mut w_sum = DMatrix::zeros(d, d);
    let mut unit_means = DMatrix::zeros(n * regenerations, d);
    let mut r = rng(seed);
    for g in 0..regenerations {
        let data = generate(&spec, &mut r).unwrap();
        let m = LinearRandomEffects::new(&data, spec.sigma2_alpha, false).unwrap();
        let e = fisher_score(&m, &theta, n_draws, WithinWeight::PerDraw, &mut r).unwrap();
        w_sum += e.w_total.matrix();
        unit_means.rows_mut(g * n, n).copy_from(e.panel.unit_scores());
    }
    (w_sum / regenerations as f64, covariance_matrix(&unit_means).unwrap())
}

/// Posterior mean differences between the zero-noise pseudo-marginal chain
/// and random-walk Metropolis on the linear-regression Q-kernel, with their
/// combined batch-means standard errors.
pub fn zero_noise_comparison(seed: u64, iterations: usize) -> Vec<(f64, f64)> {
    let data = generate(&DgpSpec::preset(ModelKind::Linreg), &mut rng(seed)).unwrap();
    let m = LinearRegression::new(&data).unwrap();
    let init = m.initial_point();
    let burn = iterations / 5;
    let proposal = ProposalConfig::default();
    let a = rwmh_q(&m, KernelOptions::default(), &init, iterations, burn, &proposal, &mut rng(seed + 1)).unwrap();
    let opts = PmOptions { n_draws: 1, within: WithinWeight::None, ..PmOptions::default() };
    let b = pm_mh_q(&NoLatent(&m), &init, iterations, burn, &opts, &proposal, &mut rng(seed + 2)).unwrap();
    (0..init.len())
        .map(|k| {
            let (xa, xb) = (a.retained(k), b.retained(k));
            let diff = mean_var(&xa).0 - mean_var(&xb).0;
            let se = (batch_means_se(&xa).powi(2) + batch_means_se(&xb).powi(2)).sqrt();
            (diff, se)
        })
        .collect()
}

/// Root-mean-square error of the Fisher-identity estimate against the
/// analytic marginal score, over `reps` independent latent draws.
pub fn fisher_rmse(m: &LinearRandomEffects, theta: &[f64], n_draws: usize, reps: usize, seed: u64) -> f64 {
    let exact = m.marginal_score(theta);
    let mut r = rng(seed);
    let sq: f64 = (0..reps)
        .map(|_| {
            let e = fisher_score(m, theta, n_draws, WithinWeight::PerDraw, &mut r).unwrap();
            (&e.m_hat - &exact).norm_squared()
        })
        .sum();
    (sq / reps as f64).sqrt()
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean_var(x).0, mean_var(y).0);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
