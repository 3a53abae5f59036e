//! Markov chain samplers: random-walk Metropolis on tractable kernels,
//! pseudo-marginal Metropolis on estimated kernels, the closed-form conjugate
//! sampler for exponential families, and exact-posterior Gibbs baselines.

pub mod conjugate;
pub mod gibbs;
pub mod pseudo_marginal;
pub mod rwmh;
pub mod truncnorm;

pub use conjugate::{
    conjugate_expfam_qposterior, conjugate_moments, ConjugateDraws, ConjugateMoments, GaussianMean, MeanMap,
    MeanParameterModel, PoissonMean,
};
pub use gibbs::{gibbs_exact_lin_re, gibbs_exact_linreg, gibbs_exact_probit_re};
pub use pseudo_marginal::{mwg_q, pm_mh_q, PmOptions};
pub use rwmh::{rwmh, rwmh_q};

use crate::error::{QError, Result};
use crate::estimators::LatentDrawSet;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Chain length used by every experiment unless overridden.
pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_BURN_IN: usize = 5_000;

/// Retained state of a pseudo-marginal chain: θ, its latent draws and
/// `log V`.
#[derive(Debug, Clone)]
pub struct PmState {
    pub theta: Vec<f64>,
    pub latents: LatentDrawSet,
    pub log_v: f64,
}

/// Ordered chain output. Row `t` of `draws` is the state after iteration
/// `t`; the first `burn_in` rows are warm-up.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub names: Vec<String>,
    pub dim: usize,
    draws: Vec<f64>,
    pub log_kernels: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub pm_state: Option<PmState>,
    /// Kernel (or estimator) evaluations, including the initial one.
    pub kernel_evaluations: usize,
    /// Proposals rejected because the kernel or estimate was not finite.
    pub nonfinite_rejections: usize,
    /// Proposals rejected for leaving the parameter support.
    pub support_rejections: usize,
    /// Mean acceptance of the inner latent sampler over all estimates.
    pub inner_acceptance: Option<f64>,
    /// Per-coordinate proposal standard deviations after warm-up.
    pub proposal_scale: Vec<f64>,
}

impl ChainTrace {
    pub(crate) fn with_capacity(dim: usize, iterations: usize, burn_in: usize) -> Self {
        Self {
            names: (1..=dim).map(|k| format!("theta{k}")).collect(),
            dim,
            draws: Vec::with_capacity(iterations * dim),
            log_kernels: Vec::with_capacity(iterations),
            accepted: Vec::with_capacity(iterations),
            acceptance_rate: 0.0,
            burn_in,
            pm_state: None,
            kernel_evaluations: 0,
            nonfinite_rejections: 0,
            support_rejections: 0,
            inner_acceptance: None,
            proposal_scale: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, theta: &[f64], log_kernel: f64, accepted: bool) {
        self.draws.extend_from_slice(theta);
        self.log_kernels.push(log_kernel);
        self.accepted.push(accepted);
    }

    pub(crate) fn finish(mut self) -> Self {
        let n = self.accepted.len();
        self.acceptance_rate =
            if n == 0 { 0.0 } else { self.accepted.iter().filter(|a| **a).count() as f64 / n as f64 };
        self
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        debug_assert_eq!(names.len(), self.dim);
        self.names = names;
        self
    }

    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn draw(&self, t: usize) -> &[f64] {
        &self.draws[t * self.dim..(t + 1) * self.dim]
    }

    /// Post-burn-in values of coordinate `k`.
    pub fn retained(&self, k: usize) -> Vec<f64> {
        (self.burn_in.min(self.len())..self.len()).map(|t| self.draws[t * self.dim + k]).collect()
    }

    pub fn n_retained(&self) -> usize {
        self.len().saturating_sub(self.burn_in)
    }

    /// Acceptance rate over the post-burn-in iterations.
    pub fn retained_acceptance(&self) -> f64 {
        let kept = &self.accepted[self.burn_in.min(self.len())..];
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().filter(|a| **a).count() as f64 / kept.len() as f64
        }
    }

    /// All iterations as a `len × dim` matrix.
    pub fn draws_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.draws)
    }

    /// Every iteration as CSV: `iteration`, one column per coordinate,
    /// `log_kernel`, `accepted` and `burn_in` (1 during warm-up).
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("iteration");
        for n in &self.names {
            let _ = write!(s, ",{n}");
        }
        s.push_str(",log_kernel,accepted,burn_in\n");
        for t in 0..self.len() {
            let _ = write!(s, "{t}");
            for v in self.draw(t) {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{},{},{}", self.log_kernels[t], u8::from(self.accepted[t]), u8::from(t < self.burn_in));
        }
        s
    }
}

/// Proposal covariance shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalScale {
    /// Same standard deviation in every coordinate.
    Isotropic(f64),
    /// Per-coordinate standard deviations.
    Diagonal(Vec<f64>),
    /// Full covariance (row-major, d×d).
    Covariance(Vec<f64>),
}

/// Gaussian random-walk proposal, with optional Robbins-Monro adaptation
/// during burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub scale: ProposalScale,
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { scale: ProposalScale::Isotropic(0.1), adapt: true, target_acceptance: 0.234 }
    }
}

impl ProposalConfig {
    pub fn fixed(sd: f64) -> Self {
        Self { scale: ProposalScale::Isotropic(sd), adapt: false, target_acceptance: 0.234 }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(QError::Config("target_acceptance must lie in (0, 1)".into()));
        }
        match &self.scale {
            ProposalScale::Isotropic(s) if !(s.is_finite() && *s > 0.0) => {
                Err(QError::Config("proposal scale must be positive".into()))
            }
            ProposalScale::Diagonal(v) if v.len() != dim || v.iter().any(|s| !(s.is_finite() && *s > 0.0)) => {
                Err(QError::Config(format!("diagonal proposal needs {dim} positive entries")))
            }
            ProposalScale::Covariance(v) => {
                if v.len() != dim * dim {
                    return Err(QError::Config(format!("proposal covariance needs {} entries", dim * dim)));
                }
                DMatrix::from_row_slice(dim, dim, v)
                    .cholesky()
                    .map(|_| ())
                    .ok_or_else(|| QError::Config("proposal covariance must be positive definite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Iterations after which adaptation switches from the initial proposal shape
/// to empirical per-coordinate standard deviations.
const SHAPE_SWITCH: usize = 100;
const RM_EXPONENT: f64 = 0.6;

/// Random-walk proposal state. Adaptation tunes a global log-scale toward the
/// target acceptance and, once enough warm-up draws exist, replaces the shape
/// with running per-coordinate standard deviations. It stops at
/// [`RandomWalk::freeze`].
#[derive(Debug, Clone)]
pub(crate) struct RandomWalk {
    dim: usize,
    log_lambda: f64,
    sd: Vec<f64>,
    chol: Option<DMatrix<f64>>,
    adapt: bool,
    target: f64,
    step: usize,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    z: DVector<f64>,
}

impl RandomWalk {
    pub(crate) fn new(cfg: &ProposalConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        let (sd, chol) = match &cfg.scale {
            ProposalScale::Isotropic(s) => (vec![*s; dim], None),
            ProposalScale::Diagonal(v) => (v.clone(), None),
            ProposalScale::Covariance(v) => {
                let l = DMatrix::from_row_slice(dim, dim, v).cholesky().expect("validated").l();
                (vec![1.0; dim], Some(l))
            }
        };
        Ok(Self {
            dim,
            log_lambda: 0.0,
            sd,
            chol,
            adapt: cfg.adapt,
            target: cfg.target_acceptance,
            step: 0,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            z: DVector::zeros(dim),
        })
    }

    pub(crate) fn propose<R: Rng + ?Sized>(&mut self, from: &[f64], out: &mut [f64], rng: &mut R) {
        let lambda = self.log_lambda.exp();
        for k in 0..self.dim {
            self.z[k] = rng.sample(StandardNormal);
        }
        match &self.chol {
            Some(l) => {
                let step = l * &self.z;
                for k in 0..self.dim {
                    out[k] = from[k] + lambda * step[k];
                }
            }
            None => {
                for k in 0..self.dim {
                    out[k] = from[k] + lambda * self.sd[k] * self.z[k];
                }
            }
        }
    }

    /// Records the outcome of one step during warm-up.
    pub(crate) fn adapt(&mut self, accept_prob: f64, state: &[f64]) {
        if !self.adapt {
            return;
        }
        self.step += 1;
        let gain = (self.step as f64).powf(-RM_EXPONENT);
        let a = if accept_prob.is_nan() { 0.0 } else { accept_prob.min(1.0) };
        self.log_lambda = (self.log_lambda + gain * (a - self.target)).clamp(-30.0, 30.0);

        self.count += 1;
        let c = self.count as f64;
        for k in 0..self.dim {
            let delta = state[k] - self.mean[k];
            self.mean[k] += delta / c;
            self.m2[k] += delta * (state[k] - self.mean[k]);
        }
        if self.count >= SHAPE_SWITCH {
            if self.count == SHAPE_SWITCH {
                self.chol = None;
                self.log_lambda = (2.38 / (self.dim as f64).sqrt()).ln();
            }
            for k in 0..self.dim {
                let var = self.m2[k] / (c - 1.0);
                let floor = 1e-10 * (1.0 + self.mean[k].abs());
                self.sd[k] = var.sqrt().max(floor);
            }
        }
    }

    pub(crate) fn freeze(&mut self) {
        self.adapt = false;
    }

    pub(crate) fn scale_summary(&self) -> Vec<f64> {
        let lambda = self.log_lambda.exp();
        self.sd.iter().map(|s| lambda * s).collect()
    }
}

/// Metropolis acceptance probability `min(1, exp(Δ))`, with NaN mapped to 0.
#[inline]
pub(crate) fn accept_probability(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}
