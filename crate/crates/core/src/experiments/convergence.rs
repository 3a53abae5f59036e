//! Decay of the estimated-kernel posterior toward a large-N reference as the
//! number of latent draws grows, on one fixed dataset.

use super::stream_rng;
use crate::error::{QError, Result};
use crate::estimators::{LatentModel, WithinWeight};
use crate::samplers::{pm_mh_q, PmOptions, ProposalConfig};
use crate::summary::{batch_means_se, mean_var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// Latent draw counts to compare, ascending.
    pub n_grid: Vec<usize>,
    pub reference_n: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Independent chains pooled at every N.
    pub chains: usize,
    pub within: WithinWeight,
    pub include_det: bool,
    pub proposal: ProposalConfig,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![1, 5, 25, 125],
            reference_n: 1000,
            iterations: 10_000,
            burn_in: 2_000,
            chains: 4,
            within: WithinWeight::PerDraw,
            include_det: true,
            proposal: ProposalConfig::default(),
            seed: 0,
            workers: 0,
        }
    }
}

/// Pooled posterior at one N and its distance from the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_draws: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Monte Carlo standard error of each posterior mean.
    pub mean_se: Vec<f64>,
    /// `|mean − reference mean|` per coordinate.
    pub mean_diff: Vec<f64>,
    /// `|sd − reference sd|` per coordinate.
    pub sd_diff: Vec<f64>,
    /// Euclidean norm of the mean differences in reference-sd units.
    pub discrepancy: f64,
    /// Monte Carlo noise scale of `discrepancy` (same units).
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub names: Vec<String>,
    pub reference: ConvergenceRow,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of log discrepancy on log N.
    pub slope: f64,
}

impl ConvergenceTable {
    /// True when no step up the grid increases the discrepancy by more than
    /// `factor` noise units.
    pub fn is_monotone_within(&self, factor: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].discrepancy <= w[0].discrepancy + factor * w[1].noise.max(w[0].noise))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_draws,discrepancy,noise");
        for n in &self.names {
            let _ = write!(s, ",{n}_mean,{n}_sd,{n}_mean_diff,{n}_sd_diff");
        }
        s.push('\n');
        for r in self.rows.iter().chain(std::iter::once(&self.reference)) {
            let _ = write!(s, "{},{},{}", r.n_draws, r.discrepancy, r.noise);
            for k in 0..self.names.len() {
                let _ = write!(s, ",{},{},{},{}", r.means[k], r.sds[k], r.mean_diff[k], r.sd_diff[k]);
            }
            s.push('\n');
        }
        s
    }
}

struct Pooled {
    means: Vec<f64>,
    sds: Vec<f64>,
    se: Vec<f64>,
}

fn run_pooled<M: LatentModel>(model: &M, init: &[f64], cfg: &ConvergenceConfig, n: usize) -> Result<Pooled> {
    let opts = PmOptions { n_draws: n, within: cfg.within, include_det: cfg.include_det, ..PmOptions::default() };
    let traces = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(cfg.seed ^ c as u64, n as u64);
            pm_mh_q(model, init, cfg.iterations, cfg.burn_in, &opts, &cfg.proposal, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let d = model.dim();
    let mut out = Pooled { means: vec![0.0; d], sds: vec![0.0; d], se: vec![0.0; d] };
    for k in 0..d {
        let pooled: Vec<f64> = traces.iter().flat_map(|t| t.retained(k)).collect();
        let (m, v) = mean_var(&pooled);
        let se2: f64 = traces.iter().map(|t| batch_means_se(&t.retained(k)).powi(2)).sum();
        out.means[k] = m;
        out.sds[k] = v.sqrt();
        out.se[k] = se2.sqrt() / cfg.chains as f64;
    }
    Ok(out)
}

fn row(n: usize, p: &Pooled, reference: &Pooled) -> ConvergenceRow {
    let d = p.means.len();
    let mean_diff: Vec<f64> = (0..d).map(|k| (p.means[k] - reference.means[k]).abs()).collect();
    let sd_diff: Vec<f64> = (0..d).map(|k| (p.sds[k] - reference.sds[k]).abs()).collect();
    let discrepancy = (0..d).map(|k| (mean_diff[k] / reference.sds[k]).powi(2)).sum::<f64>().sqrt();
    let noise = (0..d).map(|k| (p.se[k].powi(2) + reference.se[k].powi(2)) / reference.sds[k].powi(2)).sum::<f64>().sqrt();
    ConvergenceRow { n_draws: n, means: p.means.clone(), sds: p.sds.clone(), mean_se: p.se.clone(), mean_diff, sd_diff, discrepancy, noise }
}

/// Runs pooled pseudo-marginal chains at every N in the grid and at the
/// reference N on the model's (fixed) data.
pub fn convergence_study<M: LatentModel>(model: &M, init: &[f64], cfg: &ConvergenceConfig) -> Result<ConvergenceTable> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.n_grid[0] == 0 {
        return Err(QError::Config("n_grid must be non-empty, positive and strictly ascending".into()));
    }
    if cfg.chains == 0 {
        return Err(QError::Config("at least one chain per N is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| QError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        let reference = run_pooled(model, init, cfg, cfg.reference_n)?;
        let pooled = cfg.n_grid.par_iter().map(|&n| run_pooled(model, init, cfg, n)).collect::<Result<Vec<_>>>()?;
        let rows: Vec<ConvergenceRow> = cfg.n_grid.iter().zip(&pooled).map(|(&n, p)| row(n, p, &reference)).collect();
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.discrepancy > 0.0)
            .map(|r| ((r.n_draws as f64).ln(), r.discrepancy.ln()))
            .collect();
        let slope = if pts.len() < 2 {
            f64::NAN
        } else {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            sxy / sxx
        };
        Ok(ConvergenceTable {
            names: model.parameter_names(),
            reference: row(cfg.reference_n, &reference, &reference),
            rows,
            slope,
        })
    })
}
