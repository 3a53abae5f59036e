use super::{accept_probability, ChainTrace, ProposalConfig, RandomWalk};
use crate::error::{QError, Result};
use crate::kernel::{log_q_kernel, KernelOptions, ScoreModel};
use rand::Rng;

pub(crate) fn check_lengths(iterations: usize, burn_in: usize) -> Result<()> {
    if iterations == 0 {
        return Err(QError::Config("chain needs at least one iteration".into()));
    }
    if burn_in >= iterations {
        return Err(QError::Config(format!("burn-in {burn_in} must be below the chain length {iterations}")));
    }
    Ok(())
}

/// Random-walk Metropolis on an arbitrary log kernel.
///
/// `log_kernel` returns `-∞` outside the support; NaN marks a failed
/// evaluation. Both reject the proposal, and NaN is counted separately.
pub fn rwmh<F, R>(
    mut log_kernel: F,
    init: &[f64],
    iterations: usize,
    burn_in: usize,
    proposal: &ProposalConfig,
    rng: &mut R,
) -> Result<ChainTrace>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    check_lengths(iterations, burn_in)?;
    let d = init.len();
    let mut walk = RandomWalk::new(proposal, d)?;
    let mut trace = ChainTrace::with_capacity(d, iterations, burn_in);
    let mut current = init.to_vec();
    let mut lk = log_kernel(&current);
    trace.kernel_evaluations += 1;
    if !lk.is_finite() {
        return Err(QError::Initialization(format!("log kernel at the initial point is {lk}")));
    }
    let mut prop = vec![0.0; d];
    for t in 0..iterations {
        if t == burn_in {
            walk.freeze();
        }
        walk.propose(&current, &mut prop, rng);
        let lk_prop = log_kernel(&prop);
        trace.kernel_evaluations += 1;
        if lk_prop.is_nan() {
            trace.nonfinite_rejections += 1;
        } else if lk_prop == f64::NEG_INFINITY {
            trace.support_rejections += 1;
        }
        let a = accept_probability(lk_prop - lk);
        let accept = a > 0.0 && rng.random::<f64>() < a;
        if accept {
            current.copy_from_slice(&prop);
            lk = lk_prop;
        }
        if t < burn_in {
            walk.adapt(a, &current);
        }
        trace.push(&current, lk, accept);
    }
    trace.proposal_scale = walk.scale_summary();
    Ok(trace.finish())
}

/// Random-walk Metropolis on the Q-posterior of a tractable model.
///
/// A weight matrix that cannot be factorised even with jitter rejects the
/// proposal.
pub fn rwmh_q<M, R>(
    model: &M,
    options: KernelOptions,
    init: &[f64],
    iterations: usize,
    burn_in: usize,
    proposal: &ProposalConfig,
    rng: &mut R,
) -> Result<ChainTrace>
where
    M: ScoreModel + ?Sized,
    R: Rng + ?Sized,
{
    if init.len() != model.dim() {
        return Err(QError::DimensionMismatch { expected: model.dim(), got: init.len() });
    }
    let kernel = |theta: &[f64]| match log_q_kernel(model, theta, options) {
        Ok(v) => v.log_kernel,
        Err(_) => f64::NAN,
    };
    if !kernel(init).is_finite() {
        return Err(QError::Initialization("Q-kernel is not finite at the initial point".into()));
    }
    Ok(rwmh(kernel, init, iterations, burn_in, proposal, rng)?.with_names(model.parameter_names()))
}
