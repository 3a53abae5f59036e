//! Reference models, their data-generating processes and pseudo-true
//! parameters.

pub mod lin_re;
pub mod linreg;
pub mod median;
pub mod probit;

pub use lin_re::LinearRandomEffects;
pub use linreg::LinearRegression;
pub use median::{MedianModel, MedianPosterior};
pub use probit::ProbitRandomEffects;

use crate::error::{QError, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::BufRead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linreg,
    LinRe,
    ProbitRe,
    Median,
}

impl ModelKind {
    pub fn has_latents(self) -> bool {
        matches!(self, ModelKind::LinRe | ModelKind::ProbitRe)
    }
}

/// Distribution of the random effects in the generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDist {
    Gaussian,
    /// Raw Student-t with 4 degrees of freedom (unit scale, variance 2).
    StudentT4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianDgp {
    /// `N(1, 4)`.
    Dgp1,
    /// `0.9 N(1, 4) + 0.1 N(0, 1)`.
    Dgp2,
}

/// How the heteroskedasticity knob γ enters the error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseForm {
    /// `Var(ε | x) = σ² (1 + |x₁|^γ)`.
    Variance,
    /// `sd(ε | x) = σ (1 + |x₁|^γ)`.
    Scale,
}

/// Full description of one synthetic design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub model: ModelKind,
    pub n: usize,
    /// Regression coefficients (intercept first when `intercept` is set);
    /// for the median model, `[θ]`.
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Random-effect variance of the fitted model, and scale of the
    /// generated random effects.
    pub sigma2_alpha: f64,
    /// Treat `sigma2_alpha` as a parameter instead of a known constant.
    pub estimate_sigma2_alpha: bool,
    pub gamma: f64,
    pub noise_form: NoiseForm,
    /// Prepend a column of ones to the covariates.
    pub intercept: bool,
    pub latent_dist: LatentDist,
    pub median_dgp: MedianDgp,
}

impl DgpSpec {
    /// The experimental design used for each reference model.
    pub fn preset(model: ModelKind) -> Self {
        let base = Self {
            model,
            n: 100,
            beta: vec![1.0, 1.0, 1.0],
            sigma: 1.0,
            sigma2_alpha: 1.0,
            estimate_sigma2_alpha: false,
            gamma: 0.0,
            noise_form: NoiseForm::Variance,
            intercept: false,
            latent_dist: LatentDist::Gaussian,
            median_dgp: MedianDgp::Dgp1,
        };
        match model {
            ModelKind::Linreg => base,
            ModelKind::LinRe => Self { beta: vec![0.5, 1.5, 1.0, 1.0], intercept: true, ..base },
            ModelKind::ProbitRe => Self { beta: vec![1.0; 4], intercept: true, ..base },
            ModelKind::Median => Self { n: 101, beta: vec![1.0], sigma: 2.0, ..base },
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.beta.len() - usize::from(self.intercept)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(QError::Config(m.to_string()));
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta must be a non-empty finite vector");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.sigma2_alpha.is_finite() && self.sigma2_alpha > 0.0) {
            return bad("sigma2_alpha must be positive");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        match self.model {
            ModelKind::Median => {
                if self.beta.len() != 1 {
                    return bad("median model takes a single location in beta");
                }
                if self.n < 3 {
                    return bad("median model needs n >= 3");
                }
            }
            _ => {
                if self.n_covariates() == 0 {
                    return bad("at least one non-constant covariate is required");
                }
                if self.n <= self.beta.len() + 1 {
                    return bad("n must exceed the number of regression coefficients");
                }
            }
        }
        Ok(())
    }

    /// Sample size actually generated; the median design uses odd n so the
    /// sample median is a single order statistic.
    pub fn effective_n(&self) -> usize {
        if self.model == ModelKind::Median && self.n % 2 == 0 {
            self.n + 1
        } else {
            self.n
        }
    }
}

/// Observed outcomes with optional covariates (rows are units).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Option<DMatrix<f64>>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(QError::NonFinite("outcomes"));
        }
        if let Some(x) = &x {
            if x.nrows() != y.len() {
                return Err(QError::DimensionMismatch { expected: y.len(), got: x.nrows() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(QError::NonFinite("covariates"));
            }
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn design(&self) -> Result<&DMatrix<f64>> {
        self.x.as_ref().ok_or_else(|| QError::Config("model requires covariates".into()))
    }

    /// Columns `y, x1..xd`, full round-trip precision.
    pub fn to_csv(&self) -> String {
        let d = self.x.as_ref().map_or(0, |x| x.ncols());
        let mut out = String::from("y");
        for k in 1..=d {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        for i in 0..self.n() {
            let _ = write!(out, "{}", self.y[i]);
            if let Some(x) = &self.x {
                for k in 0..d {
                    let _ = write!(out, ",{}", x[(i, k)]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| QError::Parse("empty dataset file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"y") {
            return Err(QError::Parse("first column must be y".into()));
        }
        let d = cols.len() - 1;
        let mut y = Vec::new();
        let mut xs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| QError::Parse(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != d + 1 {
                return Err(QError::Parse(format!("line {}: expected {} fields", lineno + 2, d + 1)));
            }
            y.push(vals[0]);
            xs.extend_from_slice(&vals[1..]);
        }
        let x = (d > 0).then(|| DMatrix::from_row_slice(y.len(), d, &xs));
        Self::new(y, x)
    }
}

fn draw_latent<R: Rng + ?Sized>(dist: LatentDist, scale: f64, rng: &mut R) -> f64 {
    match dist {
        LatentDist::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
        LatentDist::StudentT4 => scale * StudentT::new(4.0).expect("valid dof").sample(rng),
    }
}

/// Simulates one dataset from the design.
pub fn generate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.effective_n();
    if spec.model == ModelKind::Median {
        let theta = spec.beta[0];
        let y = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                match spec.median_dgp {
                    MedianDgp::Dgp1 => theta + spec.sigma * z,
                    MedianDgp::Dgp2 => {
                        if rng.random::<f64>() < 0.9 {
                            theta + spec.sigma * z
                        } else {
                            z
                        }
                    }
                }
            })
            .collect();
        return Dataset::new(y, None);
    }

    let p = spec.beta.len();
    let off = usize::from(spec.intercept);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        if spec.intercept {
            x[(i, 0)] = 1.0;
        }
        for k in off..p {
            x[(i, k)] = rng.sample(StandardNormal);
        }
        let mean: f64 = (0..p).map(|k| x[(i, k)] * spec.beta[k]).sum();
        let h = x[(i, off)].abs().powf(spec.gamma);
        let z: f64 = rng.sample(StandardNormal);
        let noise = match spec.noise_form {
            NoiseForm::Variance => spec.sigma * (1.0 + h).sqrt() * z,
            NoiseForm::Scale => spec.sigma * (1.0 + h) * z,
        };
        let yi = match spec.model {
            ModelKind::Linreg => mean + noise,
            ModelKind::LinRe => mean + draw_latent(spec.latent_dist, spec.sigma2_alpha.sqrt(), rng) + noise,
            ModelKind::ProbitRe => {
                let a = draw_latent(spec.latent_dist, spec.sigma2_alpha.sqrt(), rng);
                let e: f64 = rng.sample(StandardNormal);
                if mean + a + e > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Median => unreachable!(),
        };
        y.push(yi);
    }
    Dataset::new(y, Some(x))
}

/// Parameter coordinates scored in the replication tables, with their
/// pseudo-true values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTruth {
    pub names: Vec<String>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn beta_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("beta{k}")).collect()
}

/// Pseudo-true parameter for the reported coordinates of each design.
///
/// Regression slopes are unchanged by mean-zero heteroskedastic noise. For the
/// probit model the Kullback-Leibler minimiser is found numerically; it equals
/// β whenever the latent distribution matches the fitted one.
pub fn pseudo_truth(spec: &DgpSpec) -> Result<PseudoTruth> {
    spec.validate()?;
    let p = spec.beta.len();
    match spec.model {
        ModelKind::Linreg | ModelKind::LinRe => {
            Ok(PseudoTruth { names: beta_names(p), indices: (0..p).collect(), values: spec.beta.clone() })
        }
        ModelKind::ProbitRe => Ok(PseudoTruth {
            names: beta_names(p),
            indices: (0..p).collect(),
            values: probit::pseudo_true_beta(spec)?,
        }),
        ModelKind::Median => {
            let v = match spec.median_dgp {
                MedianDgp::Dgp1 => spec.beta[0],
                MedianDgp::Dgp2 => median::mixture_median(spec.beta[0], spec.sigma),
            };
            Ok(PseudoTruth { names: vec!["theta".into()], indices: vec![0], values: vec![v] })
        }
    }
}
