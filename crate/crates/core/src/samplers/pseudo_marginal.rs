//! Pseudo-marginal Metropolis-Hastings on the estimated Q-posterior.
//!
//! Each proposal θ* gets a fresh set of latent draws z* and an estimate
//! `V* = |Ŵ(θ*; z*)|^{-1/2} exp{-Q̂(θ*; z*)}`. The estimate attached to the
//! current state is carried along unchanged until a proposal is accepted.

use super::rwmh::check_lengths;
use super::{accept_probability, ChainTrace, PmState, ProposalConfig, ProposalScale, RandomWalk};
use crate::error::{QError, Result};
use crate::estimators::{fisher_score, LatentDrawSet, LatentModel, WeightMode, WithinWeight, PRELIMINARY_WEIGHT_DRAWS};
use crate::weight::{factorize_psd, WeightMatrix};
use crate::params::first_violation;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmOptions {
    /// Latent draws per estimate (N).
    pub n_draws: usize,
    pub within: WithinWeight,
    pub include_det: bool,
    pub weight: WeightMode,
}

impl Default for PmOptions {
    fn default() -> Self {
        Self { n_draws: 5, within: WithinWeight::PerDraw, include_det: true, weight: WeightMode::PerTheta }
    }
}

enum Evaluation {
    Ok { log_target: f64, latents: LatentDrawSet, inner: Option<f64> },
    OutOfSupport,
    Failed,
}

fn evaluate<M, R>(model: &M, theta: &[f64], opts: &PmOptions, fixed: Option<&WeightMatrix>, rng: &mut R) -> Evaluation
where
    M: LatentModel + ?Sized,
    R: Rng + ?Sized,
{
    if first_violation(theta, &model.constraints()).is_some() {
        return Evaluation::OutOfSupport;
    }
    let log_prior = model.log_prior(theta);
    if log_prior == f64::NEG_INFINITY {
        return Evaluation::OutOfSupport;
    }
    let Ok(est) = fisher_score(model, theta, opts.n_draws, opts.within, rng) else {
        return Evaluation::Failed;
    };
    let v = match fixed {
        Some(w) => est.log_v_with(w, log_prior, opts.include_det),
        None => est.log_v(log_prior, opts.include_det),
    };
    match v {
        Ok(v) if v.log_kernel.is_finite() => {
            let inner = est.latents.inner_acceptance;
            Evaluation::Ok { log_target: v.log_kernel, latents: est.latents, inner }
        }
        _ => Evaluation::Failed,
    }
}

fn block_proposal(cfg: &ProposalConfig, block: &[usize], dim: usize) -> ProposalConfig {
    let scale = match &cfg.scale {
        ProposalScale::Isotropic(s) => ProposalScale::Isotropic(*s),
        ProposalScale::Diagonal(v) => ProposalScale::Diagonal(block.iter().map(|&k| v[k]).collect()),
        ProposalScale::Covariance(v) => {
            ProposalScale::Covariance(block.iter().flat_map(|&a| block.iter().map(move |&b| v[a * dim + b])).collect())
        }
    };
    ProposalConfig { scale, ..cfg.clone() }
}

/// Weight held for the whole chain under [`WeightMode::Fixed`], estimated at
/// the model's preliminary estimate (or `init`) from extra latent draws.
pub fn held_weight<M, R>(model: &M, init: &[f64], opts: &PmOptions, rng: &mut R) -> Result<Option<WeightMatrix>>
where
    M: LatentModel + ?Sized,
    R: Rng + ?Sized,
{
    if opts.weight == WeightMode::PerTheta {
        return Ok(None);
    }
    let at = model.preliminary_estimate().unwrap_or_else(|| init.to_vec());
    if first_violation(&at, &model.constraints()).is_some() {
        return Err(QError::Initialization("fixed-weight point lies outside the parameter support".into()));
    }
    // more draws sharpen w1 and w2, but the within term is weighted for the
    // N draws each chain estimate actually uses
    let est = fisher_score(model, &at, PRELIMINARY_WEIGHT_DRAWS.max(opts.n_draws), opts.within, rng)?;
    Ok(Some(factorize_psd(&(&est.w1 + &est.w2 * opts.within.coefficient(opts.n_draws)))?))
}

/// Pseudo-marginal MH with a joint random-walk proposal on all of θ.
pub fn pm_mh_q<M, R>(
    model: &M,
    init: &[f64],
    iterations: usize,
    burn_in: usize,
    opts: &PmOptions,
    proposal: &ProposalConfig,
    rng: &mut R,
) -> Result<ChainTrace>
where
    M: LatentModel + ?Sized,
    R: Rng + ?Sized,
{
    let all: Vec<usize> = (0..model.dim()).collect();
    mwg_q(model, init, iterations, burn_in, opts, &[all], proposal, rng)
}

/// Metropolis-within-Gibbs on the estimated Q-posterior: each iteration
/// sweeps the coordinate `blocks` in turn, drawing fresh latents at the
/// proposed θ for every block update. A single block covering θ is
/// [`pm_mh_q`].
#[allow(clippy::too_many_arguments)]
pub fn mwg_q<M, R>(
    model: &M,
    init: &[f64],
    iterations: usize,
    burn_in: usize,
    opts: &PmOptions,
    blocks: &[Vec<usize>],
    proposal: &ProposalConfig,
    rng: &mut R,
) -> Result<ChainTrace>
where
    M: LatentModel + ?Sized,
    R: Rng + ?Sized,
{
    check_lengths(iterations, burn_in)?;
    let d = model.dim();
    if init.len() != d {
        return Err(QError::DimensionMismatch { expected: d, got: init.len() });
    }
    if opts.n_draws == 0 {
        return Err(QError::InsufficientDraws { needed: 1, got: 0 });
    }
    if blocks.is_empty() || blocks.iter().any(|b| b.is_empty() || b.iter().any(|&k| k >= d)) {
        return Err(QError::Config("coordinate blocks must be non-empty and index θ".into()));
    }
    proposal.validate(d)?;
    let mut walks = blocks
        .iter()
        .map(|b| RandomWalk::new(&block_proposal(proposal, b, d), b.len()))
        .collect::<Result<Vec<_>>>()?;

    let mut trace = ChainTrace::with_capacity(d, iterations, burn_in);
    let mut inner_sum = 0.0;
    let mut inner_n = 0usize;

    let fixed = held_weight(model, init, opts, rng)?;

    let mut current = init.to_vec();
    trace.kernel_evaluations += 1;
    let (mut log_target, mut latents) = match evaluate(model, &current, opts, fixed.as_ref(), rng) {
        Evaluation::Ok { log_target, latents, inner } => {
            if let Some(a) = inner {
                inner_sum += a;
                inner_n += 1;
            }
            (log_target, latents)
        }
        Evaluation::OutOfSupport => {
            return Err(QError::Initialization("initial θ lies outside the parameter support".into()))
        }
        Evaluation::Failed => {
            return Err(QError::Initialization("estimated Q-kernel is not finite at the initial point".into()))
        }
    };

    let mut prop = current.clone();
    let mut sub_from: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut sub_to = sub_from.clone();
    for t in 0..iterations {
        if t == burn_in {
            walks.iter_mut().for_each(RandomWalk::freeze);
        }
        let mut moved = false;
        for (bi, block) in blocks.iter().enumerate() {
            for (s, &k) in block.iter().enumerate() {
                sub_from[bi][s] = current[k];
            }
            walks[bi].propose(&sub_from[bi], &mut sub_to[bi], rng);
            prop.copy_from_slice(&current);
            for (s, &k) in block.iter().enumerate() {
                prop[k] = sub_to[bi][s];
            }
            let a = match evaluate(model, &prop, opts, fixed.as_ref(), rng) {
                Evaluation::Ok { log_target: lt, latents: z, inner } => {
                    trace.kernel_evaluations += 1;
                    if let Some(acc) = inner {
                        inner_sum += acc;
                        inner_n += 1;
                    }
                    // symmetric proposal: q-ratio is 1
                    let a = accept_probability(lt - log_target);
                    if rng.random::<f64>() < a {
                        current.copy_from_slice(&prop);
                        log_target = lt;
                        latents = z;
                        moved = true;
                    }
                    a
                }
                Evaluation::OutOfSupport => {
                    trace.support_rejections += 1;
                    0.0
                }
                Evaluation::Failed => {
                    trace.kernel_evaluations += 1;
                    trace.nonfinite_rejections += 1;
                    0.0
                }
            };
            if t < burn_in {
                for (s, &k) in block.iter().enumerate() {
                    sub_from[bi][s] = current[k];
                }
                walks[bi].adapt(a, &sub_from[bi]);
            }
        }
        trace.push(&current, log_target, moved);
    }
    trace.proposal_scale = vec![0.0; d];
    for (walk, block) in walks.iter().zip(blocks) {
        for (s, &k) in walk.scale_summary().into_iter().zip(block) {
            trace.proposal_scale[k] = s;
        }
    }
    trace.pm_state = Some(PmState { theta: current, latents, log_v: log_target });
    trace.inner_acceptance = (inner_n > 0).then(|| inner_sum / inner_n as f64);
    Ok(trace.finish().with_names(model.parameter_names()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::NoLatent;
    use crate::models::{generate, DgpSpec, LinearRandomEffects, LinearRegression, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lin_re(est: bool) -> LinearRandomEffects {
        let d = generate(&DgpSpec::preset(ModelKind::LinRe), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        LinearRandomEffects::new(&d, 1.0, est).unwrap()
    }

    #[test]
    fn current_estimate_is_never_refreshed() {
        let m = lin_re(false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let iters = 300;
        let t = pm_mh_q(&m, &m.initial_point(), iters, 100, &PmOptions::default(), &ProposalConfig::default(), &mut rng)
            .unwrap();
        // one estimate for the initial point plus one per in-support proposal
        assert_eq!(t.kernel_evaluations + t.support_rejections, iters + 1);
        // the recorded log target only changes on acceptance
        for i in 1..t.len() {
            if !t.accepted[i] {
                assert_eq!(t.log_kernels[i], t.log_kernels[i - 1]);
                assert_eq!(t.draw(i), t.draw(i - 1));
            }
        }
        let st = t.pm_state.as_ref().unwrap();
        assert_eq!(st.theta.as_slice(), t.draw(t.len() - 1));
        assert_eq!(st.log_v, *t.log_kernels.last().unwrap());
    }

    #[test]
    fn negative_variance_proposals_are_support_rejections() {
        let m = lin_re(true);
        let mut init = m.initial_point();
        let p = init.len();
        init[p - 1] = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blocks = vec![(0..p - 1).collect::<Vec<_>>(), vec![p - 1]];
        let t = mwg_q(&m, &init, 200, 50, &PmOptions::default(), &blocks, &ProposalConfig::fixed(0.3), &mut rng).unwrap();
        assert!(t.support_rejections > 0);
        assert!((0..t.len()).all(|i| t.draw(i)[p - 1] > 0.0 && t.draw(i)[p - 2] > 0.0));
        assert_eq!(t.kernel_evaluations + t.support_rejections, 1 + 2 * 200);
    }

    #[test]
    fn out_of_support_start_is_an_initialization_error() {
        let m = lin_re(false);
        let mut init = m.initial_point();
        init[4] = -1.0;
        let r = pm_mh_q(&m, &init, 10, 1, &PmOptions::default(), &ProposalConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(QError::Initialization(_))));
    }

    #[test]
    fn zero_noise_adapter_matches_tractable_chain_bitwise_kernel() {
        // with no latents the estimated kernel equals the exact Q-kernel
        let d = generate(&DgpSpec::preset(ModelKind::Linreg), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let m = LinearRegression::new(&d).unwrap();
        let adapter = NoLatent(&m);
        let init = m.initial_point();
        let t = pm_mh_q(&adapter, &init, 50, 10, &PmOptions::default(), &ProposalConfig::default(), &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        for i in 0..t.len() {
            let exact =
                crate::kernel::log_q_kernel(&m, t.draw(i), crate::kernel::KernelOptions::default()).unwrap().log_kernel;
            assert!((t.log_kernels[i] - exact).abs() < 1e-9 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn fixed_weight_is_held_for_the_whole_chain() {
        let d = generate(&DgpSpec::preset(ModelKind::Linreg), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let m = LinearRegression::new(&d).unwrap();
        let adapter = NoLatent(&m);
        let init = m.initial_point();
        let opts = PmOptions { weight: WeightMode::Fixed, ..PmOptions::default() };
        let t = pm_mh_q(&adapter, &init, 60, 10, &opts, &ProposalConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // no preliminary estimate on the adapter: the weight comes from the start
        let w = fisher_score(&adapter, &init, 2, opts.within, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().w_total;
        for i in 0..t.len() {
            let est = fisher_score(&adapter, t.draw(i), 2, opts.within, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let want = est.log_v_with(&w, LatentModel::log_prior(&adapter, t.draw(i)), true).unwrap().log_kernel;
            assert!((t.log_kernels[i] - want).abs() < 1e-9 * want.abs().max(1.0));
        }
        assert_eq!(t.kernel_evaluations + t.support_rejections, 61);
    }

    #[test]
    fn held_weight_scales_the_within_term_for_the_chain_draws() {
        let m = lin_re(false);
        let opts = PmOptions { weight: WeightMode::Fixed, ..PmOptions::default() };
        let w = held_weight(&m, &m.initial_point(), &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().unwrap();
        let est = fisher_score(&m, &m.initial_point(), PRELIMINARY_WEIGHT_DRAWS, opts.within, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert!(est.w2.norm() > 0.0);
        let want = &est.w1 + &est.w2 / 5.0;
        assert!((w.matrix() - &want).norm() < 1e-12 * want.norm());
        assert!(held_weight(&m, &m.initial_point(), &PmOptions::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap().is_none());
    }

    #[test]
    fn seed_reproducible() {
        let m = lin_re(false);
        let run = || {
            pm_mh_q(&m, &m.initial_point(), 100, 20, &PmOptions::default(), &ProposalConfig::default(), &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.draws_matrix(), b.draws_matrix());
        assert_eq!(a.log_kernels, b.log_kernels);
    }
}
