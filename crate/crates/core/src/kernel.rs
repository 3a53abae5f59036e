//! Q-posterior log-kernel assembly for models with tractable scores.

use crate::error::Result;
use crate::params::{first_violation, Constraint};
use crate::weight::{quad_form, WeightMatrix};
use nalgebra::DVector;

/// The scaled score `m_n(θ)/√n` together with its weight `W_n(θ)`.
#[derive(Debug, Clone)]
pub struct ScoreSummary {
    pub scaled_score: DVector<f64>,
    pub weight: WeightMatrix,
}

/// A model whose score vector and weight matrix are computable at any θ.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    fn constraints(&self) -> Vec<Constraint>;

    /// Log prior density up to a constant; only evaluated inside the support.
    fn log_prior(&self, theta: &[f64]) -> f64;

    fn score_summary(&self, theta: &[f64]) -> Result<ScoreSummary>;

    fn parameter_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|k| format!("theta{k}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOptions {
    /// Include the `-½ log|W_n(θ)|` factor. Likelihood-score posteriors carry
    /// it; loss-based (generalized) posteriors do not.
    pub include_det: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { include_det: true }
    }
}

/// Decomposed log kernel of the Q-posterior at one θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QKernelValue {
    pub log_kernel: f64,
    pub q_term: f64,
    pub log_det_term: f64,
    pub log_prior: f64,
    pub include_det: bool,
}

impl QKernelValue {
    pub fn assemble(q_term: f64, log_det_term: f64, log_prior: f64, include_det: bool) -> Self {
        let mut log_kernel = -q_term + log_prior;
        if include_det {
            log_kernel -= 0.5 * log_det_term;
        }
        Self { log_kernel, q_term, log_det_term, log_prior, include_det }
    }

    /// Value returned outside the prior support.
    pub fn rejected(include_det: bool) -> Self {
        Self {
            log_kernel: f64::NEG_INFINITY,
            q_term: f64::INFINITY,
            log_det_term: f64::NAN,
            log_prior: f64::NEG_INFINITY,
            include_det,
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.log_kernel == f64::NEG_INFINITY
    }
}

/// Evaluates `-Q_n(θ) - ½ log|W_n(θ)| [include_det] + log π(θ)`.
///
/// θ outside the model's support yields a `-∞` kernel, not an error.
pub fn log_q_kernel<M: ScoreModel + ?Sized>(
    model: &M,
    theta: &[f64],
    options: KernelOptions,
) -> Result<QKernelValue> {
    if theta.len() != model.dim() {
        return Err(crate::error::QError::DimensionMismatch { expected: model.dim(), got: theta.len() });
    }
    if first_violation(theta, &model.constraints()).is_some() {
        return Ok(QKernelValue::rejected(options.include_det));
    }
    let log_prior = model.log_prior(theta);
    if log_prior == f64::NEG_INFINITY {
        return Ok(QKernelValue::rejected(options.include_det));
    }
    let summary = model.score_summary(theta)?;
    let q = quad_form(&summary.scaled_score, &summary.weight)?;
    Ok(QKernelValue::assemble(q, summary.weight.log_det(), log_prior, options.include_det))
}

/// Keeps the weight fixed at a preliminary point `θ̄` while the score moves
/// with θ.
pub struct FixedWeight<'a, M: ScoreModel> {
    inner: &'a M,
    weight: WeightMatrix,
}

impl<'a, M: ScoreModel> FixedWeight<'a, M> {
    pub fn new(inner: &'a M, at: &[f64]) -> Result<Self> {
        let weight = inner.score_summary(at)?.weight;
        Ok(Self { inner, weight })
    }
}

impl<M: ScoreModel> ScoreModel for FixedWeight<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn constraints(&self) -> Vec<Constraint> {
        self.inner.constraints()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.inner.log_prior(theta)
    }

    fn score_summary(&self, theta: &[f64]) -> Result<ScoreSummary> {
        let s = self.inner.score_summary(theta)?;
        Ok(ScoreSummary { scaled_score: s.scaled_score, weight: self.weight.clone() })
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.parameter_names()
    }
}
