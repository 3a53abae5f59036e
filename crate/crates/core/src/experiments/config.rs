//! Declarative experiment configuration.
//!
//! A config file names a model in `[dgp]`; every `dgp` key it leaves out is
//! taken from that model's preset design. `key.path=value` overrides are
//! applied on top before validation, so unknown keys are rejected whether
//! they come from the file or the command line.

use crate::error::{QError, Result};
use crate::estimators::{WeightMode, WithinWeight};
use crate::models::{DgpSpec, MedianPosterior, ModelKind};
use crate::samplers::{ProposalConfig, DEFAULT_BURN_IN, DEFAULT_ITERATIONS};
use crate::summary::IntervalKind;
use serde::{Deserialize, Serialize};
use std::path::Path;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    QPosterior,
    Exact,
    Generalized,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::QPosterior => "q_posterior",
            Method::Exact => "exact",
            Method::Generalized => "generalized",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::QPosterior => "Q-posterior",
            Method::Exact => "Exact",
            Method::Generalized => "Generalized",
        }
    }

    /// Independent RNG stream used by this method within a replication.
    pub fn stream(self) -> u64 {
        match self {
            Method::QPosterior => 1,
            Method::Exact => 2,
            Method::Generalized => 3,
        }
    }

    pub fn is_available(self, model: ModelKind) -> bool {
        match self {
            Method::QPosterior | Method::Exact => true,
            Method::Generalized => model == ModelKind::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Latent draws per score estimate.
    pub n_latent: usize,
    pub within: WithinWeight,
    pub weight: WeightMode,
    /// Keep `−½ log|W|` in the kernel; unset means the model default
    /// (dropped for the median model, kept otherwise).
    pub include_det: Option<bool>,
    pub proposal: ProposalConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            burn_in: DEFAULT_BURN_IN,
            n_latent: 5,
            within: WithinWeight::PerDraw,
            weight: WeightMode::PerTheta,
            include_det: None,
            proposal: ProposalConfig::default(),
        }
    }
}

impl ChainConfig {
    pub fn include_det_for(&self, model: ModelKind) -> bool {
        self.include_det.unwrap_or(model != ModelKind::Median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MedianConfig {
    /// Bootstrap resamples behind `W_n(θ)`.
    pub resamples: usize,
    /// Baseline used by the `generalized` method.
    pub baseline: MedianPosterior,
}

impl Default for MedianConfig {
    fn default() -> Self {
        Self { resamples: crate::models::median::DEFAULT_RESAMPLES, baseline: MedianPosterior::Generalized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default = "default_level")]
    pub credible_level: f64,
    #[serde(default)]
    pub interval: IntervalKind,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub median: MedianConfig,
    /// Keep the full chain of every replication in memory (for `traces/`).
    #[serde(default)]
    pub keep_traces: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::QPosterior, Method::Exact]
}

fn default_replications() -> usize {
    500
}

fn default_level() -> f64 {
    0.95
}

impl ExperimentConfig {
    /// Preset design for `model` with every other setting at its default.
    pub fn preset(model: ModelKind) -> Self {
        let methods = if model == ModelKind::Median {
            vec![Method::QPosterior, Method::Generalized]
        } else {
            default_methods()
        };
        Self {
            dgp: DgpSpec::preset(model),
            methods,
            replications: default_replications(),
            chain: ChainConfig::default(),
            credible_level: default_level(),
            interval: IntervalKind::EqualTailed,
            workers: 0,
            seed: 0,
            median: MedianConfig::default(),
            keep_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(QError::Config("replications must be at least 1".into()));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(QError::Config("credible_level must lie in (0, 1)".into()));
        }
        if self.chain.iterations == 0 || self.chain.burn_in >= self.chain.iterations {
            return Err(QError::Config("chain needs iterations > burn_in".into()));
        }
        if self.chain.iterations - self.chain.burn_in < crate::summary::MIN_INTERVAL_DRAWS {
            return Err(QError::Config(format!(
                "chain keeps {} draws; intervals need at least {}",
                self.chain.iterations - self.chain.burn_in,
                crate::summary::MIN_INTERVAL_DRAWS
            )));
        }
        if self.chain.n_latent == 0 {
            return Err(QError::Config("n_latent must be at least 1".into()));
        }
        if self.dgp.model == ModelKind::Median && self.median.resamples < 2 {
            return Err(QError::Config("median.resamples must be at least 2".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !m.is_available(self.dgp.model) {
                return Err(QError::Config(format!("method {} is not defined for {:?}", m.label(), self.dgp.model)));
            }
            if !seen.insert(*m) {
                return Err(QError::Config(format!("method {} listed twice", m.label())));
            }
        }
        Ok(())
    }

    /// Parses TOML text, filling `dgp` from the model preset, and applies
    /// overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: Table = toml::from_str(text).map_err(|e| QError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let model_value = root
            .get("dgp")
            .and_then(|d| d.get("model"))
            .cloned()
            .ok_or_else(|| QError::Config("missing dgp.model (linreg, lin_re, probit_re or median)".into()))?;
        let model: ModelKind = model_value.try_into().map_err(|e: toml::de::Error| QError::Config(e.to_string()))?;

        let preset = Value::try_from(ExperimentConfig::preset(model)).map_err(|e| QError::Config(e.to_string()))?;
        let Value::Table(mut merged) = preset else { unreachable!("config serializes to a table") };
        merge(&mut merged, root);
        let cfg: ExperimentConfig =
            Value::Table(merged).try_into().map_err(|e: toml::de::Error| QError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string (so `dgp.model=linreg` works without quotes).
pub fn apply_override(root: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) =
        spec.split_once('=').ok_or_else(|| QError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(QError::Config(format!("override key `{path}` is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => return Err(QError::Config(format!("override `{path}`: `{k}` is not a table"))),
        };
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}
