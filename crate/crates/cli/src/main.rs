use clap::{Args, Parser, Subcommand};
use qposterior::experiments::{
    convergence_study, fit_method, parse_report_csv, replication_seed, run_experiment, stream_rng, ConvergenceConfig,
    ExperimentConfig, ExperimentRun, ParsedTable,
};
use qposterior::models::{generate, Dataset, LinearRandomEffects, ModelKind, ProbitRandomEffects};
use qposterior::selftest::{run_selftest, SelftestOptions};
use qposterior::summary::{kde_grid, mean_var, CoordinateSummary};
use qposterior::QError;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const SCHEMA_HINT: &str = "\
a config file is TOML; the only required key is the model:

    [dgp]
    model = \"linreg\"        # linreg | lin_re | probit_re | median

everything else (dgp.n, dgp.gamma, replications, chain.iterations, ...) falls
back to the model's preset. See configs/ for complete examples.";

#[derive(Parser)]
#[command(name = "qpost", version, about = "Q-posterior replication studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replication study and write report.csv, report.txt and diagnostics.json.
    Simulate(RunArgs),
    /// Fit every configured method to a single dataset and write traces and density grids.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Replication index whose simulated dataset is used.
        #[arg(long, default_value_t = 0)]
        replication: usize,
        /// Fit this CSV (columns y, x1..xd) instead of a simulated dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Points per density grid.
        #[arg(long, default_value_t = 256)]
        grid_points: usize,
    },
    /// Re-render one or more report.csv files (or directories holding one) as aligned text.
    Tables {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Posterior discrepancy against a large-N reference as the latent draw count grows.
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,5,25,125")]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        reference: usize,
        #[arg(long, default_value_t = 4)]
        chains: usize,
    },
    /// Run the fast invariant suite.
    Selftest {
        /// Replace the standard normal density at zero (to exercise a failing check).
        #[arg(long, hide = true)]
        phi_at_zero: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "qpost-out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set dgp.gamma=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
}

enum Failure {
    /// Bad invocation or config: exit 2.
    Usage(String),
    /// The run itself failed: exit 1.
    Run(String),
}

impl From<QError> for Failure {
    fn from(e: QError) -> Self {
        match e {
            QError::Config(_) | QError::Parse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl RunArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        if !self.config.is_file() {
            return Err(Failure::Usage(format!("config file {} not found\n\n{SCHEMA_HINT}", self.config.display())));
        }
        let mut overrides = self.overrides.clone();
        overrides.extend(self.seed.map(|s| format!("seed={s}")));
        overrides.extend(self.workers.map(|w| format!("workers={w}")));
        overrides.extend(self.replications.map(|r| format!("replications={r}")));
        ExperimentConfig::from_file(&self.config, &overrides)
            .map_err(|e| Failure::Usage(format!("{}: {e}\n\n{SCHEMA_HINT}", self.config.display())))
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, contents).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn files_under(dir: &Path, prefix: &str, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        if entry.file_type()?.is_dir() {
            files_under(&entry.path(), &format!("{name}/"), out)?;
        } else if name != "manifest.json" {
            out.push((name, entry.path()));
        }
    }
    Ok(())
}

/// Writes `manifest.json` with the resolved config, seed and a SHA-256 of
/// every other file in the directory.
fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, extra: Value) -> CliResult<()> {
    let mut files = Vec::new();
    files_under(dir, "", &mut files)?;
    let mut artifacts = BTreeMap::new();
    for (name, path) in files {
        artifacts.insert(name, hex::encode(Sha256::digest(std::fs::read(path)?)));
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "parameters": extra,
        "artifacts": artifacts,
    });
    write(dir, "manifest.json", &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))
}

fn diagnostics(cfg: &ExperimentConfig, run: &ExperimentRun) -> Value {
    let r = &run.report;
    let methods: Vec<Value> = r
        .methods
        .iter()
        .map(|m| {
            json!({
                "method": m.method.label(),
                "mean_acceptance": m.mean_acceptance,
                "mean_inner_acceptance": m.mean_inner_acceptance,
                "nonfinite_rejections": m.nonfinite_rejections,
                "support_rejections": m.support_rejections,
            })
        })
        .collect();
    json!({
        "config": cfg,
        "replications": r.replications,
        "succeeded": r.succeeded,
        "failed": r.failed,
        "failures": r.failures,
        "methods": methods,
    })
}

fn simulate(args: &RunArgs) -> CliResult<()> {
    let cfg = args.load()?;
    let run = run_experiment(&cfg)?;
    let out = &args.out;
    write(out, "report.csv", &run.report.to_csv())?;
    write(out, "report.txt", &run.report.to_text())?;
    write(out, "diagnostics.json", &(serde_json::to_string_pretty(&diagnostics(&cfg, &run)).expect("json") + "\n"))?;
    if cfg.keep_traces {
        for rep in &run.replications {
            for (method, trace) in &rep.traces {
                write(out, &format!("traces/rep{:04}_{}.csv", rep.index, method.label()), &trace.to_csv())?;
            }
        }
    }
    write_manifest(out, "simulate", &cfg, Value::Null)?;
    print!("{}", run.report.to_text());
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig, replication: usize, data: Option<&Path>) -> CliResult<Dataset> {
    match data {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            Ok(Dataset::from_csv(std::io::BufReader::new(f))?)
        }
        None => Ok(generate(&cfg.dgp, &mut stream_rng(replication_seed(cfg.seed, replication), 0))?),
    }
}

fn sample(args: &RunArgs, replication: usize, data: Option<&Path>, grid_points: usize) -> CliResult<()> {
    let cfg = args.load()?;
    if grid_points < 2 {
        return Err(Failure::Usage("--grid-points must be at least 2".into()));
    }
    let data = load_dataset(&cfg, replication, data)?;
    let seed = replication_seed(cfg.seed, replication);
    let out = &args.out;
    write(out, "dataset.csv", &data.to_csv())?;
    let mut grid = String::from("method,coordinate,x,density\n");
    let mut summary = String::from("method,coordinate,mean,sd,lo,hi,acceptance\n");
    let mut text = format!("{:<14} {:<10} {:>10} {:>10} {:>10} {:>10}\n", "method", "coordinate", "mean", "sd", "lo", "hi");
    for &method in &cfg.methods {
        let trace = fit_method(&cfg, &data, method, &mut stream_rng(seed, method.stream()))?;
        write(out, &format!("traces/{}.csv", method.label()), &trace.to_csv())?;
        for (k, name) in trace.names.iter().enumerate() {
            let draws = trace.retained(k);
            let s = CoordinateSummary::from_draws(&draws, cfg.credible_level, cfg.interval)?;
            let sd = mean_var(&draws).1.sqrt();
            let _ = writeln!(summary, "{},{name},{},{sd},{},{},{}", method.label(), s.mean, s.lo, s.hi, trace.acceptance_rate);
            let _ = writeln!(text, "{:<14} {name:<10} {:>10.4} {sd:>10.4} {:>10.4} {:>10.4}", method.label(), s.mean, s.lo, s.hi);
            for (x, d) in kde_grid(&draws, grid_points) {
                let _ = writeln!(grid, "{},{name},{x},{d}", method.label());
            }
        }
    }
    write(out, "density_grid.csv", &grid)?;
    write(out, "posterior_summary.csv", &summary)?;
    write_manifest(out, "sample", &cfg, json!({ "replication": replication, "grid_points": grid_points }))?;
    print!("{text}");
    Ok(())
}

fn convergence(args: &RunArgs, grid: &[usize], reference: usize, chains: usize) -> CliResult<()> {
    let cfg = args.load()?;
    let data = load_dataset(&cfg, 0, None)?;
    let ch = &cfg.chain;
    let conv = ConvergenceConfig {
        n_grid: grid.to_vec(),
        reference_n: reference,
        iterations: ch.iterations,
        burn_in: ch.burn_in,
        chains,
        within: ch.within,
        include_det: ch.include_det_for(cfg.dgp.model),
        proposal: ch.proposal.clone(),
        seed: cfg.seed,
        workers: cfg.workers,
    };
    let (s2a, est) = (cfg.dgp.sigma2_alpha, cfg.dgp.estimate_sigma2_alpha);
    let table = match cfg.dgp.model {
        ModelKind::LinRe => {
            let m = LinearRandomEffects::new(&data, s2a, est)?;
            convergence_study(&m, &m.initial_point(), &conv)?
        }
        ModelKind::ProbitRe => {
            let m = ProbitRandomEffects::new(&data, s2a, est)?;
            convergence_study(&m, &m.initial_point(), &conv)?
        }
        other => return Err(Failure::Usage(format!("convergence needs a latent-variable model, not {other:?}"))),
    };
    write(&args.out, "convergence.csv", &table.to_csv())?;
    write_manifest(&args.out, "convergence", &cfg, json!({ "grid": grid, "reference": reference, "chains": chains }))?;
    println!("{:>8} {:>12} {:>10}", "N", "discrepancy", "noise");
    for r in &table.rows {
        println!("{:>8} {:>12.5} {:>10.5}", r.n_draws, r.discrepancy, r.noise);
    }
    println!("log-log slope {:.3}; monotone within 2x noise: {}", table.slope, table.is_monotone_within(2.0));
    Ok(())
}

fn render_table(t: &ParsedTable) -> String {
    // columns after `coordinate, truth` come in blocks of four per method
    let methods: Vec<&str> = t.columns.iter().filter_map(|c| c.strip_suffix("_cov_se")).collect();
    let mut s = format!("{:<12} {:>8}", "", "truth");
    for m in &methods {
        let _ = write!(s, " | {m:^38}");
    }
    let _ = write!(s, "\n{:<12} {:>8}", "", "");
    for _ in &methods {
        let _ = write!(s, " | {:>9} {:>8} {:>8} {:>10}", "Bias", "Var", "Cov", "(SE)");
    }
    s.push('\n');
    for (name, _) in &t.rows {
        let _ = write!(s, "{name:<12} {:>8.4}", t.value(name, "truth").unwrap_or(f64::NAN));
        for m in &methods {
            let v = |c: &str| t.value(name, &format!("{m}_{c}")).unwrap_or(f64::NAN);
            let _ = write!(s, " | {:>9.4} {:>8.4} {:>8.4} {:>10}", v("bias"), v("var"), v("cov"), format!("({:.4})", v("cov_se")));
        }
        s.push('\n');
    }
    s
}

fn tables(inputs: &[PathBuf]) -> CliResult<()> {
    for input in inputs {
        let path = if input.is_dir() { input.join("report.csv") } else { input.clone() };
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let table = parse_report_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        println!("{}\n{}", path.display(), render_table(&table));
    }
    Ok(())
}

fn selftest(phi_at_zero: Option<f64>) -> CliResult<()> {
    let mut opts = SelftestOptions::default();
    if let Some(v) = phi_at_zero {
        opts.phi_at_zero = v;
    }
    let report = run_selftest(&opts);
    for c in &report.checks {
        println!("{} {:<28} {:>7.3}s  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Run(format!("failed checks: {}", report.failed_names().join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sample { run, replication, data, grid_points } => {
            sample(run, *replication, data.as_deref(), *grid_points)
        }
        Command::Tables { inputs } => tables(inputs),
        Command::Convergence { run, grid, reference, chains } => convergence(run, grid, *reference, *chains),
        Command::Selftest { phi_at_zero } => selftest(*phi_at_zero),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

