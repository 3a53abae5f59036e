//! Monte Carlo score estimation through Fisher's identity, the within/between
//! split of the estimated-score covariance, and the estimating-equations
//! bootstrap.
//!
//! For a latent-variable model the observed-data score is the conditional
//! expectation of the complete-data score under `p_θ(α | y)`. Averaging the
//! complete-data score over `N` conditional draws gives `m̂_n(θ; z)`. Its
//! covariance is estimated from two pieces:
//!
//! * `w1`, the sample covariance of the per-unit draw means `m̄_iN`;
//! * `w2`, the average within-unit covariance of the per-draw scores `m_ij`.
//!
//! `w_total = w1 + c · w2`, where `c` is chosen by [`WithinWeight`].

use crate::error::{QError, Result};
use crate::kernel::QKernelValue;
use crate::panel::{covariance_matrix, DrawScores, ScorePanel};
use crate::params::Constraint;
use crate::weight::{factorize_psd, quad_form, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Conditional latent draws `α^{(j)}_{1:n} ~ p_θ(α | y)`, stored draw-major:
/// entry `(j, i, a)` is at `(j * n_units + i) * latent_dim + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDrawSet {
    pub n_draws: usize,
    pub n_units: usize,
    pub latent_dim: usize,
    pub draws: Vec<f64>,
    /// Inner-chain iterations discarded per unit (0 for exact samplers).
    pub burn_in: usize,
    /// Acceptance rate of the inner MH sampler, when one is used.
    pub inner_acceptance: Option<f64>,
}

impl LatentDrawSet {
    #[inline]
    pub fn get(&self, draw: usize, unit: usize) -> &[f64] {
        let o = (draw * self.n_units + unit) * self.latent_dim;
        &self.draws[o..o + self.latent_dim]
    }
}

/// A model with latent variables whose complete-data score is analytic and
/// whose latent conditional can be sampled.
pub trait LatentModel: Sync {
    fn dim(&self) -> usize;

    fn constraints(&self) -> Vec<Constraint>;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn n_units(&self) -> usize;

    fn latent_dim(&self) -> usize;

    /// Draws `n_draws` conditionally independent latent paths given `y` at θ.
    fn draw_latents<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        n_draws: usize,
        rng: &mut R,
    ) -> Result<LatentDrawSet>;

    /// Complete-data score of unit `unit` at latent value `alpha`, written
    /// into `out` (length `dim()`).
    fn complete_unit_score(&self, theta: &[f64], unit: usize, alpha: &[f64], out: &mut [f64]);

    /// Consistent estimate of θ at which a fixed weight is evaluated
    /// ([`WeightMode::Fixed`]); `None` falls back to the chain's start.
    fn preliminary_estimate(&self) -> Option<Vec<f64>> {
        None
    }

    fn parameter_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|k| format!("theta{k}")).collect()
    }
}

/// Scale `c` on the within-unit term in `w_total = w1 + c · w2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithinWeight {
    /// `c = 0`: between-unit sample covariance only.
    None,
    /// `c = 1`.
    Full,
    /// `c = 1/N`.
    #[default]
    PerDraw,
}

impl WithinWeight {
    pub fn coefficient(self, n_draws: usize) -> f64 {
        match self {
            WithinWeight::None => 0.0,
            WithinWeight::Full => 1.0,
            WithinWeight::PerDraw => 1.0 / n_draws as f64,
        }
    }
}

/// Where the weight matrix inside `Q̂` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Re-estimated with every score estimate.
    #[default]
    PerTheta,
    /// Estimated once at the chain's starting point (a preliminary
    /// consistent estimate) and held fixed.
    Fixed,
}

/// Latent draws used for the one-off weight estimate in [`WeightMode::Fixed`].
pub const PRELIMINARY_WEIGHT_DRAWS: usize = 200;

#[derive(Debug, Clone)]
pub struct VarianceSplit {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub w_total: WeightMatrix,
}

/// Result of one Fisher-identity estimation at θ.
#[derive(Debug, Clone)]
pub struct EstimatedScore {
    pub panel: ScorePanel,
    pub m_hat: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub w_total: WeightMatrix,
    pub latents: LatentDrawSet,
}

impl EstimatedScore {
    /// `Q̂_n(θ; z) = ½ (m̂/√n)ᵀ Ŵ⁻¹ (m̂/√n)`.
    pub fn q_hat(&self) -> Result<f64> {
        self.q_hat_with(&self.w_total)
    }

    /// `Q̂` with an externally supplied weight.
    pub fn q_hat_with(&self, w: &WeightMatrix) -> Result<f64> {
        let n = self.panel.n_units() as f64;
        quad_form(&(&self.m_hat / n.sqrt()), w)
    }

    /// `log V + log π = -Q̂ - ½ log|Ŵ| [include_det] + log π`.
    pub fn log_v(&self, log_prior: f64, include_det: bool) -> Result<QKernelValue> {
        self.log_v_with(&self.w_total, log_prior, include_det)
    }

    pub fn log_v_with(&self, w: &WeightMatrix, log_prior: f64, include_det: bool) -> Result<QKernelValue> {
        Ok(QKernelValue::assemble(self.q_hat_with(w)?, w.log_det(), log_prior, include_det))
    }
}

/// Within-unit covariance `w2 = n⁻¹ Σ_i N⁻¹ Σ_j (m_ij − m̄_iN)(m_ij − m̄_iN)ᵀ`.
fn within_covariance(draws: &DrawScores, unit_means: &DMatrix<f64>) -> DMatrix<f64> {
    let (nd, n, d) = (draws.n_draws, draws.n_units, draws.dim);
    let mut w2 = DMatrix::<f64>::zeros(d, d);
    let mut dev = vec![0.0; d];
    for i in 0..n {
        for j in 0..nd {
            let row = draws.get(j, i);
            for k in 0..d {
                dev[k] = row[k] - unit_means[(i, k)];
            }
            for a in 0..d {
                for b in 0..=a {
                    w2[(a, b)] += dev[a] * dev[b];
                }
            }
        }
    }
    let scale = 1.0 / (n as f64 * nd as f64);
    for a in 0..d {
        for b in 0..=a {
            let v = w2[(a, b)] * scale;
            w2[(a, b)] = v;
            w2[(b, a)] = v;
        }
    }
    w2
}

/// Splits the estimated-score covariance into between-unit (`w1`) and
/// within-unit (`w2`) parts and factors `w1 + c · w2`.
pub fn variance_split(panel: &ScorePanel, within: WithinWeight) -> Result<VarianceSplit> {
    let draws = panel.draw_scores().ok_or(QError::InsufficientDraws { needed: 2, got: 0 })?;
    if draws.n_draws < 2 {
        return Err(QError::InsufficientDraws { needed: 2, got: draws.n_draws });
    }
    let w1 = covariance_matrix(panel.unit_scores())?;
    let w2 = within_covariance(draws, panel.unit_scores());
    let total = &w1 + &w2 * within.coefficient(draws.n_draws);
    let w_total = factorize_psd(&total)?;
    Ok(VarianceSplit { w1, w2, w_total })
}

/// Fisher-identity Monte Carlo estimate of the score at θ from `n_draws`
/// conditional latent draws.
///
/// With a single draw the within-unit term is undefined; `w2` is then zero
/// and `w_total` is `w1`.
pub fn fisher_score<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    theta: &[f64],
    n_draws: usize,
    within: WithinWeight,
    rng: &mut R,
) -> Result<EstimatedScore> {
    if n_draws == 0 {
        return Err(QError::InsufficientDraws { needed: 1, got: 0 });
    }
    let latents = model.draw_latents(theta, n_draws, rng)?;
    let (n, d) = (model.n_units(), model.dim());
    let mut values = vec![0.0; n_draws * n * d];
    for j in 0..n_draws {
        for i in 0..n {
            let alpha = latents.get(j, i);
            if alpha.iter().any(|a| !a.is_finite()) {
                return Err(QError::Estimation { unit: i, reason: "non-finite latent draw".into() });
            }
            let o = (j * n + i) * d;
            model.complete_unit_score(theta, i, alpha, &mut values[o..o + d]);
            if values[o..o + d].iter().any(|v| !v.is_finite()) {
                return Err(QError::Estimation { unit: i, reason: "non-finite complete-data score".into() });
            }
        }
    }
    let panel = ScorePanel::from_draws(DrawScores { n_draws, n_units: n, dim: d, values })?;
    let m_hat = panel.total();
    let (w1, w2, w_total) = if n_draws >= 2 {
        let split = variance_split(&panel, within)?;
        (split.w1, split.w2, split.w_total)
    } else {
        let w1 = covariance_matrix(panel.unit_scores())?;
        let w_total = factorize_psd(&w1)?;
        (w1, DMatrix::zeros(d, d), w_total)
    };
    Ok(EstimatedScore { panel, m_hat, w1, w2, w_total, latents })
}

/// Per-unit score model without latents.
pub trait UnitScoreModel: Sync {
    fn dim(&self) -> usize;
    fn constraints(&self) -> Vec<Constraint>;
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn n_units(&self) -> usize;
    fn unit_score(&self, theta: &[f64], unit: usize, out: &mut [f64]);
    fn parameter_names(&self) -> Vec<String>;
}

/// Presents a latent-free model as a [`LatentModel`] whose "draws" carry no
/// information: every estimate equals the exact score and `w2 = 0`.
pub struct NoLatent<'a, M: UnitScoreModel>(pub &'a M);

impl<M: UnitScoreModel> LatentModel for NoLatent<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn constraints(&self) -> Vec<Constraint> {
        self.0.constraints()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.0.log_prior(theta)
    }
    fn n_units(&self) -> usize {
        self.0.n_units()
    }
    fn latent_dim(&self) -> usize {
        0
    }
    fn draw_latents<R: Rng + ?Sized>(&self, _: &[f64], n_draws: usize, _: &mut R) -> Result<LatentDrawSet> {
        Ok(LatentDrawSet {
            n_draws,
            n_units: self.0.n_units(),
            latent_dim: 0,
            draws: Vec::new(),
            burn_in: 0,
            inner_acceptance: None,
        })
    }
    fn complete_unit_score(&self, theta: &[f64], unit: usize, _: &[f64], out: &mut [f64]) {
        self.0.unit_score(theta, unit, out)
    }
    fn parameter_names(&self) -> Vec<String> {
        self.0.parameter_names()
    }
}

/// Estimating-equations bootstrap: covariance (divisor `B`) of
/// `m_n^{(b)}(θ)/√n` over `B` iid resamples of the data units.
pub fn ee_bootstrap_variance<T, F, R>(
    score_fn: F,
    data: &[T],
    theta: &[f64],
    resamples: usize,
    rng: &mut R,
) -> Result<WeightMatrix>
where
    T: Clone,
    F: Fn(&[T], &[f64]) -> DVector<f64>,
    R: Rng + ?Sized,
{
    let n = data.len();
    if n == 0 {
        return Err(QError::InsufficientData { needed: 1, got: 0 });
    }
    if resamples < 2 {
        return Err(QError::InsufficientData { needed: 2, got: resamples });
    }
    let mut buf: Vec<T> = Vec::with_capacity(n);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(resamples);
    let root_n = (n as f64).sqrt();
    for _ in 0..resamples {
        buf.clear();
        for _ in 0..n {
            buf.push(data[rng.random_range(0..n)].clone());
        }
        let m = score_fn(&buf, theta) / root_n;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(QError::NonFinite("bootstrap score"));
        }
        rows.push(m);
    }
    let d = rows[0].len();
    let panel = DMatrix::from_fn(resamples, d, |b, k| rows[b][k]);
    factorize_psd(&covariance_matrix(&panel)?)
}
