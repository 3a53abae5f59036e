//! Reduction of replication results into bias / variance / coverage tables,
//! with CSV and fixed-width text renderings.

use super::config::{ExperimentConfig, Method};
use super::{ReplicationFailure, ReplicationResult};
use crate::error::{QError, Result};
use crate::models::{ModelKind, PseudoTruth};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRow {
    pub name: String,
    pub truth: f64,
    /// Mean over replications of posterior mean minus the pseudo-truth.
    pub bias: f64,
    /// Mean over replications of the posterior variance.
    pub var: f64,
    /// Fraction of intervals containing the pseudo-truth.
    pub cov: f64,
    /// Binomial standard error of `cov`.
    pub cov_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub rows: Vec<CoordinateRow>,
    pub mean_acceptance: f64,
    pub mean_inner_acceptance: Option<f64>,
    pub nonfinite_rejections: usize,
    pub support_rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub model: ModelKind,
    pub coordinates: Vec<String>,
    pub truth: Vec<f64>,
    pub credible_level: f64,
    pub replications: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures: Vec<ReplicationFailure>,
    pub methods: Vec<MethodReport>,
}

impl ReplicationReport {
    /// Averages the successful replications; failures are listed, never
    /// imputed.
    pub fn reduce(cfg: &ExperimentConfig, truth: &PseudoTruth, reps: &[ReplicationResult]) -> Self {
        let ok: Vec<_> = reps.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let failures: Vec<_> = reps.iter().filter_map(|r| r.outcome.as_ref().err().cloned()).collect();
        let r = ok.len() as f64;
        let methods = cfg
            .methods
            .iter()
            .enumerate()
            .map(|(mi, &method)| {
                let results: Vec<_> = ok.iter().map(|v| &v[mi]).collect();
                let rows = truth
                    .names
                    .iter()
                    .enumerate()
                    .map(|(k, name)| {
                        let t = truth.values[k];
                        let bias = results.iter().map(|m| m.summaries[k].mean - t).sum::<f64>() / r;
                        let var = results.iter().map(|m| m.summaries[k].var).sum::<f64>() / r;
                        let hits = results.iter().filter(|m| m.summaries[k].covers(t)).count();
                        let cov = hits as f64 / r;
                        CoordinateRow {
                            name: name.clone(),
                            truth: t,
                            bias,
                            var,
                            cov,
                            cov_se: (cov * (1.0 - cov) / r).sqrt(),
                        }
                    })
                    .collect();
                let inner: Vec<f64> = results.iter().filter_map(|m| m.inner_acceptance).collect();
                MethodReport {
                    method,
                    rows,
                    mean_acceptance: results.iter().map(|m| m.acceptance).sum::<f64>() / r,
                    mean_inner_acceptance: (!inner.is_empty()).then(|| inner.iter().sum::<f64>() / inner.len() as f64),
                    nonfinite_rejections: results.iter().map(|m| m.nonfinite_rejections).sum(),
                    support_rejections: results.iter().map(|m| m.support_rejections).sum(),
                }
            })
            .collect();
        Self {
            model: cfg.dgp.model,
            coordinates: truth.names.clone(),
            truth: truth.values.clone(),
            credible_level: cfg.credible_level,
            replications: reps.len(),
            succeeded: ok.len(),
            failed: failures.len(),
            failures,
            methods,
        }
    }

    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["coordinate".to_string(), "truth".to_string()];
        for m in &self.methods {
            for col in ["bias", "var", "cov", "cov_se"] {
                h.push(format!("{}_{col}", m.method.label()));
            }
        }
        h
    }

    /// CSV with full-precision values (shortest round-trip representation).
    /// With no methods only the header is written.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header()).expect("in-memory write");
        if !self.methods.is_empty() {
            for (k, name) in self.coordinates.iter().enumerate() {
                let mut rec = vec![name.clone(), self.truth[k].to_string()];
                for m in &self.methods {
                    let row = &m.rows[k];
                    rec.extend([row.bias, row.var, row.cov, row.cov_se].iter().map(f64::to_string));
                }
                w.write_record(&rec).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Fixed-width table with four decimals: one row per coordinate and a
    /// Bias / Var / Cov block per method, coverage followed by its standard
    /// error.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:?}: {} of {} replications succeeded, {:.0}% credible intervals",
            self.model,
            self.succeeded,
            self.replications,
            100.0 * self.credible_level
        );
        let width = 38;
        let _ = write!(s, "{:<12}", "");
        for m in &self.methods {
            let _ = write!(s, " | {:^width$}", m.method.title());
        }
        s.push('\n');
        let _ = write!(s, "{:<12}", "");
        for _ in &self.methods {
            let _ = write!(s, " | {:>9} {:>8} {:>8} {:>10}", "Bias", "Var", "Cov", "(SE)");
        }
        s.push('\n');
        if !self.methods.is_empty() {
            for (k, name) in self.coordinates.iter().enumerate() {
                let _ = write!(s, "{name:<12}");
                for m in &self.methods {
                    let r = &m.rows[k];
                    let _ = write!(s, " | {:>9.4} {:>8.4} {:>8.4} {:>10}", r.bias, r.var, r.cov, format!("({:.4})", r.cov_se));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// A report CSV read back into named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub columns: Vec<String>,
    /// Coordinate name and the numeric columns after it.
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ParsedTable {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|h| h == column)?;
        let (_, vals) = self.rows.iter().find(|(n, _)| n == row)?;
        vals.get(c.checked_sub(1)?).copied()
    }
}

pub fn parse_report_csv(text: &str) -> Result<ParsedTable> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let columns: Vec<String> =
        rdr.headers().map_err(|e| QError::Parse(e.to_string()))?.iter().map(str::to_string).collect();
    if columns.first().map(String::as_str) != Some("coordinate") {
        return Err(QError::Parse("report CSV must start with a coordinate column".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| QError::Parse(e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| QError::Parse(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((rec[0].to_string(), vals));
    }
    Ok(ParsedTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{run_experiment, ExperimentConfig};

    fn small_report() -> ReplicationReport {
        let mut cfg = ExperimentConfig::preset(ModelKind::Linreg);
        cfg.replications = 3;
        cfg.chain.iterations = 700;
        cfg.chain.burn_in = 200;
        cfg.seed = 5;
        run_experiment(&cfg).unwrap().report
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let rep = small_report();
        let parsed = parse_report_csv(&rep.to_csv()).unwrap();
        assert_eq!(parsed.rows.len(), 3);
        for (k, name) in rep.coordinates.iter().enumerate() {
            assert_eq!(parsed.value(name, "truth").unwrap().to_bits(), rep.truth[k].to_bits());
            for m in &rep.methods {
                let r = &m.rows[k];
                for (col, v) in [("bias", r.bias), ("var", r.var), ("cov", r.cov), ("cov_se", r.cov_se)] {
                    let got = parsed.value(name, &format!("{}_{col}", m.method.label())).unwrap();
                    assert_eq!(got.to_bits(), v.to_bits(), "{name} {col}");
                }
            }
        }
    }

    #[test]
    fn text_table_has_a_row_per_coefficient() {
        let rep = small_report();
        let text = rep.to_text();
        for name in ["beta1", "beta2", "beta3"] {
            assert_eq!(text.lines().filter(|l| l.starts_with(name)).count(), 1);
        }
        assert!(text.contains("Q-posterior") && text.contains("Exact"));
    }

    #[test]
    fn empty_method_set_gives_header_only() {
        let mut rep = small_report();
        rep.methods.clear();
        assert_eq!(rep.to_csv(), "coordinate,truth\n");
        assert!(parse_report_csv(&rep.to_csv()).unwrap().rows.is_empty());
    }

    #[test]
    fn bad_csv_is_a_parse_error() {
        assert!(matches!(parse_report_csv("x,y\n1,2\n"), Err(QError::Parse(_))));
        assert!(matches!(parse_report_csv("coordinate,truth\nb,abc\n"), Err(QError::Parse(_))));
    }
}
