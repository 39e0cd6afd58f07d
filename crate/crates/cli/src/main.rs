//! Command-line interface for layered chain graph experiments.
//!
//! ```text
//! chaingraph train   --config PATH [--seed N] [--out DIR] [--runs N]
//! chaingraph eval    --model PATH --config PATH [--out DIR]
//! chaingraph compare --config PATH [--methods LIST] [--seed N] [--out DIR] [--runs N]
//! chaingraph verify  [--check NAME] [--seed N] [--out DIR] [--tol X]
//! ```
//!
//! Exit codes: 0 on success (all checks passed), 1 when a verification
//! check fails, 2 on usage or configuration errors.

mod config;
mod run;

use std::fmt;
use std::process::ExitCode;

use config::ExperimentConfig;
use run::Method;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

const USAGE: &str = "usage: chaingraph <train|eval|compare|verify> [options]

commands:
  train    --config PATH [--seed N] [--out DIR] [--runs N]
  eval     --model PATH --config PATH [--out DIR]
  compare  --config PATH [--methods none,dropout,pcff] [--seed N] [--out DIR] [--runs N]
  verify   [--check activations|marginals|dropout_scaling|residual|gradients|all]
           [--seed N] [--out DIR] [--tol X]

options:
  --config PATH    experiment configuration (JSON)
  --model PATH     saved model (JSON), for eval
  --seed N         override the config seed
  --out DIR        output directory (default: config out_dir, or `out`)
  --methods LIST   comma-separated method subset for compare
  --check NAME     verification check name (default: all)
  --runs N         override the config run count
  --tol X          override every verification tolerance";

#[derive(Default)]
struct Args {
    command: Option<String>,
    config: Option<String>,
    model: Option<String>,
    seed: Option<u64>,
    out: Option<String>,
    methods: Option<String>,
    check: Option<String>,
    runs: Option<usize>,
    tol: Option<f64>,
}

fn parse_args(argv: &[String]) -> Result<Args, CliError> {
    let mut args = Args::default();
    let mut it = argv.iter();
    args.command = it.next().cloned();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("flag {name} needs a value")))
        };
        match flag.as_str() {
            "--config" => args.config = Some(value("--config")?),
            "--model" => args.model = Some(value("--model")?),
            "--seed" => {
                args.seed = Some(value("--seed")?.parse().map_err(|_| {
                    CliError::Usage("flag --seed needs an unsigned integer".into())
                })?)
            }
            "--out" => args.out = Some(value("--out")?),
            "--methods" => args.methods = Some(value("--methods")?),
            "--check" => args.check = Some(value("--check")?),
            "--runs" => {
                args.runs = Some(value("--runs")?.parse().map_err(|_| {
                    CliError::Usage("flag --runs needs a positive integer".into())
                })?)
            }
            "--tol" => {
                args.tol = Some(value("--tol")?.parse().map_err(|_| {
                    CliError::Usage("flag --tol needs a number".into())
                })?)
            }
            "--help" | "-h" => return Err(CliError::Usage(USAGE.to_string())),
            other => return Err(CliError::Usage(format!("unknown flag `{other}`"))),
        }
    }
    Ok(args)
}

fn load_config(args: &Args) -> Result<ExperimentConfig, CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("flag --config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(runs) = args.runs {
        if runs == 0 {
            return Err(CliError::Usage("flag --runs needs a positive integer".into()));
        }
        config.runs = runs;
    }
    Ok(config)
}

fn dispatch(args: &Args) -> Result<bool, CliError> {
    match args.command.as_deref() {
        Some("train") => {
            let config = load_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
            run::cmd_train(&config, &out)?;
            Ok(true)
        }
        Some("eval") => {
            let model = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("flag --model is required".into()))?;
            let config = load_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
            run::cmd_eval(model, &config, &out)?;
            Ok(true)
        }
        Some("compare") => {
            let config = load_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
            let methods = match &args.methods {
                Some(list) => Method::parse_list(list)?,
                None => vec![Method::None, Method::Dropout, Method::Pcff],
            };
            run::cmd_compare(&config, &methods, &out)?;
            Ok(true)
        }
        Some("verify") => {
            let check = args.check.clone().unwrap_or_else(|| "all".to_string());
            let seed = args.seed.unwrap_or(0);
            let out = args.out.clone().unwrap_or_else(|| "out".to_string());
            run::cmd_verify(&check, seed, &out, args.tol)
        }
        Some(other) => Err(CliError::Usage(format!(
            "unknown command `{other}`\n{USAGE}"
        ))),
        None => Err(CliError::Usage(USAGE.to_string())),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match parse_args(&argv).and_then(|args| dispatch(&args)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
