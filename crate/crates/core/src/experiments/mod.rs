//! Replication harness: simulate a design repeatedly, fit each method, and
//! reduce posterior summaries to bias, variance and coverage tables.

pub mod config;
pub mod convergence;
pub mod report;

pub use config::{apply_override, ChainConfig, ExperimentConfig, MedianConfig, Method};
pub use convergence::{convergence_study, ConvergenceConfig, ConvergenceRow, ConvergenceTable};
pub use report::{parse_report_csv, CoordinateRow, MethodReport, ParsedTable, ReplicationReport};

use crate::error::{QError, Result};
use crate::estimators::{LatentModel, WeightMode};
use crate::kernel::KernelOptions;
use crate::models::median::{baseline_log_density, sample_median};
use crate::models::{
    generate, pseudo_truth, Dataset, LinearRandomEffects, LinearRegression, MedianModel, MedianPosterior, ModelKind,
    ProbitRandomEffects, PseudoTruth,
};
use crate::samplers::{
    gibbs_exact_lin_re, gibbs_exact_linreg, gibbs_exact_probit_re, pm_mh_q, rwmh, rwmh_q, ChainTrace, PmOptions,
};
use crate::summary::CoordinateSummary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest tolerated fraction of failed replications.
pub const FAILURE_BUDGET: f64 = 0.05;

pub fn within_budget(failed: usize, total: usize) -> bool {
    failed as f64 <= FAILURE_BUDGET * total as f64
}

/// Seed of replication `r`: the base seed with `r` xor-ed in.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    base ^ r as u64
}

/// ChaCha stream `stream` of `seed`. Stream 0 generates data; each method
/// draws from its own stream so adding or removing methods leaves the others
/// unchanged.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Start of a pseudo-marginal chain. A held weight is estimated at the
/// model's preliminary estimate, and the chain starts there too: far from the
/// mode a single lucky kernel estimate can pin the chain for good.
fn pm_start<M: LatentModel>(model: &M, default: Vec<f64>, weight: WeightMode) -> Vec<f64> {
    match weight {
        WeightMode::PerTheta => default,
        WeightMode::Fixed => model.preliminary_estimate().unwrap_or(default),
    }
}

/// Runs one method's sampler on a dataset.
pub fn fit_method(cfg: &ExperimentConfig, data: &Dataset, method: Method, rng: &mut ChaCha8Rng) -> Result<ChainTrace> {
    let spec = &cfg.dgp;
    let ch = &cfg.chain;
    let (iters, burn) = (ch.iterations, ch.burn_in);
    let include_det = ch.include_det_for(spec.model);
    let pm = PmOptions { n_draws: ch.n_latent, within: ch.within, include_det, weight: ch.weight };
    match (spec.model, method) {
        (ModelKind::Linreg, Method::QPosterior) => {
            let m = LinearRegression::new(data)?;
            rwmh_q(&m, KernelOptions { include_det }, &m.initial_point(), iters, burn, &ch.proposal, rng)
        }
        (ModelKind::Linreg, Method::Exact) => gibbs_exact_linreg(&LinearRegression::new(data)?, iters, burn, rng),
        (ModelKind::LinRe, Method::QPosterior) => {
            let m = LinearRandomEffects::new(data, spec.sigma2_alpha, spec.estimate_sigma2_alpha)?;
            pm_mh_q(&m, &pm_start(&m, m.initial_point(), ch.weight), iters, burn, &pm, &ch.proposal, rng)
        }
        (ModelKind::LinRe, Method::Exact) => {
            let m = LinearRandomEffects::new(data, spec.sigma2_alpha, spec.estimate_sigma2_alpha)?;
            gibbs_exact_lin_re(&m, iters, burn, rng)
        }
        (ModelKind::ProbitRe, Method::QPosterior) => {
            let m = ProbitRandomEffects::new(data, spec.sigma2_alpha, spec.estimate_sigma2_alpha)?;
            pm_mh_q(&m, &pm_start(&m, m.initial_point(), ch.weight), iters, burn, &pm, &ch.proposal, rng)
        }
        (ModelKind::ProbitRe, Method::Exact) => {
            let m = ProbitRandomEffects::new(data, spec.sigma2_alpha, spec.estimate_sigma2_alpha)?;
            gibbs_exact_probit_re(&m, iters, burn, rng)
        }
        (ModelKind::Median, Method::QPosterior) => {
            let m = MedianModel::new(&data.y, cfg.median.resamples, rng)?;
            rwmh_q(&m, KernelOptions { include_det }, &m.initial_point(), iters, burn, &ch.proposal, rng)
        }
        (ModelKind::Median, Method::Exact | Method::Generalized) => {
            // the order-statistic posterior is exact for T_n under the working F
            let kind = if method == Method::Exact { MedianPosterior::OrderStatistic } else { cfg.median.baseline };
            let (t_n, n) = (sample_median(&data.y), data.n());
            let t = rwmh(|th| baseline_log_density(t_n, n, th[0], kind), &[t_n], iters, burn, &ch.proposal, rng)?;
            Ok(t.with_names(vec!["theta".into()]))
        }
        (model, method) => Err(QError::Config(format!("method {} is not defined for {model:?}", method.label()))),
    }
}

/// Per-method output of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// One entry per reported coordinate.
    pub summaries: Vec<CoordinateSummary>,
    pub acceptance: f64,
    pub inner_acceptance: Option<f64>,
    pub nonfinite_rejections: usize,
    pub support_rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: Option<Method>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Vec<MethodResult>, ReplicationFailure>,
    /// Full chains, kept only when the config asks for them.
    pub traces: Vec<(Method, ChainTrace)>,
}

fn summarize(
    cfg: &ExperimentConfig,
    truth: &PseudoTruth,
    method: Method,
    trace: &ChainTrace,
) -> Result<MethodResult> {
    let summaries = truth
        .indices
        .iter()
        .map(|&k| CoordinateSummary::from_draws(&trace.retained(k), cfg.credible_level, cfg.interval))
        .collect::<Result<Vec<_>>>()?;
    if summaries.iter().any(|s| !(s.mean.is_finite() && s.var.is_finite())) {
        return Err(QError::NonFinite("posterior summary"));
    }
    Ok(MethodResult {
        method,
        summaries,
        acceptance: trace.acceptance_rate,
        inner_acceptance: trace.inner_acceptance,
        nonfinite_rejections: trace.nonfinite_rejections,
        support_rejections: trace.support_rejections,
    })
}

/// Simulates dataset `r` and fits every configured method to it.
pub fn run_replication(cfg: &ExperimentConfig, truth: &PseudoTruth, r: usize) -> ReplicationResult {
    let seed = replication_seed(cfg.seed, r);
    let mut traces = Vec::new();
    let fail = |method: Option<Method>, e: QError| ReplicationFailure { replication: r, method, error: e.to_string() };
    let outcome = (|| {
        let data = generate(&cfg.dgp, &mut stream_rng(seed, 0)).map_err(|e| fail(None, e))?;
        let mut results = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let mut rng = stream_rng(seed, method.stream());
            let trace = fit_method(cfg, &data, method, &mut rng).map_err(|e| fail(Some(method), e))?;
            results.push(summarize(cfg, truth, method, &trace).map_err(|e| fail(Some(method), e))?);
            if cfg.keep_traces {
                traces.push((method, trace));
            }
        }
        Ok(results)
    })();
    ReplicationResult { index: r, seed, outcome, traces }
}

/// A finished experiment: the reduced report and the per-replication results
/// it was built from.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ReplicationReport,
    pub replications: Vec<ReplicationResult>,
}

/// Runs every replication on a pool of `cfg.workers` threads and reduces the
/// successful ones. Results are collected in replication order, so the report
/// does not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let truth = pseudo_truth(&cfg.dgp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| QError::Config(format!("worker pool: {e}")))?;
    let replications: Vec<ReplicationResult> =
        pool.install(|| (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, &truth, r)).collect());
    let failed = replications.iter().filter(|r| r.outcome.is_err()).count();
    if !within_budget(failed, cfg.replications) {
        return Err(QError::Experiment { failed, total: cfg.replications });
    }
    let report = ReplicationReport::reduce(cfg, &truth, &replications);
    Ok(ExperimentRun { report, replications })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DgpSpec;

    fn quick(model: ModelKind, reps: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(model);
        cfg.replications = reps;
        cfg.chain.iterations = 1_200;
        cfg.chain.burn_in = 400;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn fixed_weight_chains_start_at_the_preliminary_estimate() {
        let data = generate(&DgpSpec::preset(ModelKind::ProbitRe), &mut stream_rng(2, 0)).unwrap();
        let m = ProbitRandomEffects::new(&data, 1.0, false).unwrap();
        let mle = m.marginal_mle().unwrap();
        assert_eq!(pm_start(&m, m.initial_point(), WeightMode::Fixed), mle);
        assert_eq!(pm_start(&m, m.initial_point(), WeightMode::PerTheta), m.initial_point());
    }

    #[test]
    fn seeds_are_xor_of_base_and_index() {
        assert_eq!(replication_seed(0b1010, 3), 0b1001);
        assert_eq!(replication_seed(7, 0), 7);
    }

    #[test]
    fn single_replication_coverage_is_binary() {
        for model in [ModelKind::Linreg, ModelKind::Median] {
            let run = run_experiment(&quick(model, 1)).unwrap();
            for m in &run.report.methods {
                for row in &m.rows {
                    assert!(row.cov == 0.0 || row.cov == 1.0);
                }
            }
        }
    }

    #[test]
    fn every_model_and_method_runs() {
        for model in [ModelKind::LinRe, ModelKind::ProbitRe] {
            let mut cfg = quick(model, 2);
            cfg.chain.iterations = 600;
            cfg.chain.burn_in = 200;
            let run = run_experiment(&cfg).unwrap();
            assert_eq!(run.report.succeeded, 2);
            assert_eq!(run.report.methods.len(), 2);
        }
        let mut cfg = quick(ModelKind::Median, 2);
        cfg.methods = vec![Method::QPosterior, Method::Exact, Method::Generalized];
        assert_eq!(run_experiment(&cfg).unwrap().report.methods.len(), 3);
    }

    #[test]
    fn method_streams_are_independent_of_method_set() {
        let mut a = quick(ModelKind::Linreg, 2);
        a.methods = vec![Method::Exact, Method::QPosterior];
        let mut b = a.clone();
        b.methods = vec![Method::QPosterior];
        let ra = run_experiment(&a).unwrap().report;
        let rb = run_experiment(&b).unwrap().report;
        assert_eq!(ra.method(Method::QPosterior).unwrap(), rb.method(Method::QPosterior).unwrap());
    }

    #[test]
    fn failure_budget() {
        assert!(within_budget(0, 1));
        assert!(within_budget(25, 500));
        assert!(!within_budget(26, 500));
        assert!(!within_budget(1, 10));
    }

    #[test]
    fn failed_replications_are_counted_not_reduced() {
        let cfg = quick(ModelKind::Linreg, 3);
        let truth = pseudo_truth(&cfg.dgp).unwrap();
        let mut reps: Vec<ReplicationResult> = (0..3).map(|r| run_replication(&cfg, &truth, r)).collect();
        let full = ReplicationReport::reduce(&cfg, &truth, &reps[..2]);
        reps[2].outcome = Err(ReplicationFailure { replication: 2, method: Some(Method::Exact), error: "boom".into() });
        let report = ReplicationReport::reduce(&cfg, &truth, &reps);
        assert_eq!((report.succeeded, report.failed), (2, 1));
        assert_eq!(report.failures[0].error, "boom");
        assert_eq!(report.methods, full.methods);
    }
}
