//! Fast invariant suite behind `qpost selftest`: numerical constants, weight
//! algebra, the conjugate moment formulas and finite-difference score checks.

use crate::estimators::{fisher_score, LatentModel, WithinWeight};
use crate::kernel::QKernelValue;
use crate::models::median::median_score;
use crate::models::{generate, DgpSpec, LinearRandomEffects, LinearRegression, ModelKind, ProbitRandomEffects};
use crate::panel::covariance_matrix;
use crate::samplers::conjugate_moments;
use crate::special::{normal_cdf, normal_pdf, normal_quantile};
use crate::weight::{factorize_psd, quad_form};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::time::Instant;

/// Values the suite treats as ground truth. Overriding one simulates a
/// corrupted constant.
#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub phi_at_zero: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { phi_at_zero: normal_pdf(0.0) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

type Check = std::result::Result<String, String>;

fn close(what: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    let err = (got - want).abs() / want.abs().max(1.0);
    if err < tol {
        Ok(())
    } else {
        Err(format!("{what}: {got} vs {want} (rel err {err:.2e})"))
    }
}

fn normal_constants(opts: &SelftestOptions) -> Check {
    let closed_form = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    close("phi(0) against 1/sqrt(2 pi)", opts.phi_at_zero, closed_form, 1e-15)?;
    close("normal_pdf(0)", normal_pdf(0.0), opts.phi_at_zero, 1e-15)?;
    close("Phi(0)", normal_cdf(0.0), 0.5, 1e-15)?;
    close("Phi^-1(0.975)", normal_quantile(0.975), 1.959_963_984_540_054, 1e-9)?;
    for x in [-3.0, -0.4, 1.3] {
        close("Phi^-1(Phi(x))", normal_quantile(normal_cdf(x)), x, 1e-9)?;
    }
    Ok(format!("phi(0) = {}", opts.phi_at_zero))
}

fn weight_algebra(_: &SelftestOptions) -> Check {
    let (a, b, c) = (2.0, 0.3, 0.7);
    let w = factorize_psd(&DMatrix::from_row_slice(2, 2, &[a, b, b, c])).map_err(|e| e.to_string())?;
    let s = DVector::from_vec(vec![0.4, -1.1]);
    let det = a * c - b * b;
    // inverse of a 2×2 written out by hand
    let q_hand = 0.5 * (c * s[0] * s[0] - 2.0 * b * s[0] * s[1] + a * s[1] * s[1]) / det;
    close("quadratic form", quad_form(&s, &w).map_err(|e| e.to_string())?, q_hand, 1e-12)?;
    close("log determinant", w.log_det(), det.ln(), 1e-12)?;
    let v = QKernelValue::assemble(2.0, 4f64.ln(), -1.0, true);
    close("kernel assembly", v.log_kernel, -2.0 - 2f64.ln() - 1.0, 1e-15)?;
    let v = QKernelValue::assemble(2.0, 4f64.ln(), -1.0, false);
    close("kernel assembly without det", v.log_kernel, -3.0, 1e-15)?;
    Ok("2x2 quadratic form, log|W| and kernel assembly".into())
}

fn conjugate_oracle(_: &SelftestOptions) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, d) = (80, 3);
    let s = DMatrix::from_fn(n, d, |_, j| j as f64 + rng.sample::<f64, _>(StandardNormal));
    let mu0 = DVector::from_vec(vec![0.2, -0.1, 0.5]);
    let w0 = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.1, 0.6, 0.05, 0.0, 0.05, 0.4]);
    let m = conjugate_moments(&s, &mu0, &w0).map_err(|e| e.to_string())?;
    let wn_inv = covariance_matrix(&s).map_err(|e| e.to_string())?.try_inverse().ok_or("singular W_n")?;
    let w0_inv = w0.try_inverse().ok_or("singular W_0")?;
    let cov = (&wn_inv * n as f64 + &w0_inv).try_inverse().ok_or("singular precision")?;
    let mean = &cov * (&wn_inv * s.row_mean().transpose() * n as f64 + &w0_inv * &mu0);
    let (e_cov, e_mean) = ((&m.sigma - &cov).abs().max(), (&m.b_n - &mean).abs().max());
    if e_cov < 1e-10 && e_mean < 1e-10 {
        Ok(format!("max abs error {:.1e}", e_cov.max(e_mean)))
    } else {
        Err(format!("completed square disagrees: covariance {e_cov:.2e}, mean {e_mean:.2e}"))
    }
}

fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], k: usize) -> f64 {
    let h = 1e-6 * theta[k].abs().max(1.0);
    let (mut up, mut dn) = (theta.to_vec(), theta.to_vec());
    up[k] += h;
    dn[k] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn dataset(model: ModelKind, seed: u64) -> std::result::Result<crate::models::Dataset, String> {
    let mut spec = DgpSpec::preset(model);
    spec.gamma = 1.0;
    generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())
}

fn fd_linreg(_: &SelftestOptions) -> Check {
    let m = LinearRegression::new(&dataset(ModelKind::Linreg, 3)?).map_err(|e| e.to_string())?;
    let theta = [0.8, 1.3, 0.6, 1.7];
    let total = m.score_panel(&theta).map_err(|e| e.to_string())?.total();
    for k in 0..theta.len() {
        close(&format!("d/d{}", k + 1), total[k], central_difference(|t| m.log_likelihood(t), &theta, k), 1e-6)?;
    }
    Ok("4 coordinates".into())
}

fn fd_complete<M: LatentModel>(
    m: &M,
    theta: &[f64],
    log_density: impl Fn(&[f64], usize, f64) -> f64,
) -> std::result::Result<usize, String> {
    let mut out = vec![0.0; theta.len()];
    let mut checked = 0;
    for (unit, alpha) in [(0usize, 0.4), (13, -1.1), (37, 1.9)] {
        m.complete_unit_score(theta, unit, &[alpha], &mut out);
        for k in 0..theta.len() {
            let fd = central_difference(|t| log_density(t, unit, alpha), theta, k);
            close(&format!("unit {unit} coordinate {k}"), out[k], fd, 1e-6)?;
            checked += 1;
        }
    }
    Ok(checked)
}

fn fd_lin_re(_: &SelftestOptions) -> Check {
    let data = dataset(ModelKind::LinRe, 4)?;
    let mut checked = 0;
    for est in [false, true] {
        let m = LinearRandomEffects::new(&data, 1.0, est).map_err(|e| e.to_string())?;
        let mut theta = vec![0.3, 1.2, 0.8, 1.1, 1.4];
        if est {
            theta.push(0.7);
        }
        checked += fd_complete(&m, &theta, |t, i, a| m.complete_log_density(t, i, a))?;
    }
    Ok(format!("{checked} partial derivatives"))
}

fn fd_probit_re(_: &SelftestOptions) -> Check {
    let data = dataset(ModelKind::ProbitRe, 5)?;
    let mut checked = 0;
    for est in [false, true] {
        let m = ProbitRandomEffects::new(&data, 1.0, est).map_err(|e| e.to_string())?;
        let mut theta = vec![0.4; m.n_beta()];
        if est {
            theta.push(1.6);
        }
        checked += fd_complete(&m, &theta, |t, i, a| m.complete_log_density(t, i, a))?;
    }
    Ok(format!("{checked} partial derivatives"))
}

fn fd_median(opts: &SelftestOptions) -> Check {
    // m(u) = ½ d/du log{F(u)(1 − F(u))}
    let log_f = |u: &[f64]| 0.5 * (normal_cdf(u[0]) * normal_cdf(-u[0])).ln();
    for u in [-2.0, -0.5, 0.3, 1.7] {
        close(&format!("m({u})"), median_score(u), central_difference(log_f, &[u], 0), 1e-6)?;
    }
    // d/du of f/F and of f/(1 − F) at the origin are ∓4 φ(0)²
    let slope = central_difference(|u| median_score(u[0]), &[0.0], 0);
    close("m'(0) against -4 phi(0)^2", slope, -4.0 * opts.phi_at_zero.powi(2), 1e-6)?;
    Ok("4 points and the slope at the origin".into())
}

fn fisher_identity(_: &SelftestOptions) -> Check {
    let m = LinearRandomEffects::new(&dataset(ModelKind::LinRe, 6)?, 1.0, false).map_err(|e| e.to_string())?;
    let theta = [0.3, 1.7, 0.9, 1.2, 0.8];
    let nd = 400;
    let e = fisher_score(&m, &theta, nd, WithinWeight::PerDraw, &mut ChaCha8Rng::seed_from_u64(21))
        .map_err(|e| e.to_string())?;
    let exact = m.marginal_score(&theta);
    let draws = e.panel.draw_scores().ok_or("estimate kept no draw scores")?;
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let totals: Vec<f64> = (0..nd).map(|j| (0..m.n_units()).map(|i| draws.get(j, i)[k]).sum()).collect();
        let (_, var) = crate::summary::mean_var(&totals);
        let z = (e.m_hat[k] - exact[k]).abs() / (var / nd as f64).sqrt();
        if z >= 3.0 {
            return Err(format!("coordinate {k}: {} vs analytic {} ({z:.2} SE)", e.m_hat[k], exact[k]));
        }
        worst = worst.max(z);
    }
    Ok(format!("largest deviation {worst:.2} SE at N = {nd}"))
}

const CHECKS: &[(&str, fn(&SelftestOptions) -> Check)] = &[
    ("normal_constants", normal_constants),
    ("weight_algebra", weight_algebra),
    ("conjugate_moments_oracle", conjugate_oracle),
    ("linreg_score_fd", fd_linreg),
    ("lin_re_score_fd", fd_lin_re),
    ("probit_re_score_fd", fd_probit_re),
    ("median_score_fd", fd_median),
    ("fisher_identity_lin_re", fisher_identity),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check; a panic inside one is reported as its failure.
pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let checks = CHECKS
        .iter()
        .map(|&(name, f)| {
            let start = Instant::now();
            let res = std::panic::catch_unwind(|| f(opts))
                .unwrap_or_else(|_| Err("check panicked".to_string()));
            let (passed, detail) = match res {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect();
    SelftestReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run_selftest(&SelftestOptions::default());
        assert!(r.passed(), "{:?}", r.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        assert_eq!(r.checks.len(), check_names().len());
    }

    #[test]
    fn corrupted_phi_fails_named_checks() {
        let r = run_selftest(&SelftestOptions { phi_at_zero: 0.4 });
        let failed = r.failed_names();
        assert!(failed.contains(&"normal_constants"));
        assert!(failed.contains(&"median_score_fd"));
        assert!(!failed.contains(&"weight_algebra"));
    }
}
