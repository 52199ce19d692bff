use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lacunary::experiments::{self, Config, RunOptions};
use lacunary::{Budget, Error};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Identities,
    Weyl,
    Alpha,
    ErrorDecay,
    Counterexample,
    Lipschitz,
    Dsigma,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Identities => "identities",
            Experiment::Weyl => "weyl",
            Experiment::Alpha => "alpha",
            Experiment::ErrorDecay => "error-decay",
            Experiment::Counterexample => "counterexample",
            Experiment::Lipschitz => "lipschitz",
            Experiment::Dsigma => "dsigma",
        }
    }
}

/// Numerical experiments on lacunary discrete maximal operators.
#[derive(Debug, Parser)]
#[command(name = "lacunary", version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// key = value file; defaults to the sum of five squares.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for the JSON report and CSV sidecars.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Operation-count cap.
    #[arg(long, default_value_t = Budget::DEFAULT_CAP)]
    budget: u64,
    /// Print the JSON report to stdout.
    #[arg(long)]
    json: bool,
    /// Exit with status 1 when any check fails.
    #[arg(long)]
    strict: bool,
    /// Leave the timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default_sphere(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        config.set(k.trim(), v.trim());
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions { seed: cli.seed, budget: Budget::new(cli.budget), timestamp: !cli.no_timestamp, ..RunOptions::default() };
    let mut report = match experiments::run(cli.experiment.name(), &config, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => 2,
                e if e.is_budget() => 3,
                _ => 1,
            });
        }
    };
    if let Some(dir) = &cli.out {
        if let Err(e) = report.write(dir) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if cli.json {
        println!("{}", report.to_json());
    } else {
        for c in &report.results {
            let status = if c.pass { "pass" } else { "FAIL" };
            match &c.error {
                Some(err) => println!("{status} {:<32} error: {err}", c.name),
                None => println!("{status} {:<32} {:.6e} {} {:.6e}", c.name, c.value, c.comparison, c.tolerance),
            }
        }
        for path in &report.outputs {
            println!("wrote {path}");
        }
    }
    if report.budget_exhausted() {
        return ExitCode::from(3);
    }
    if cli.strict && !report.pass {
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
