//! Command implementations: training runs, method comparison, evaluation,
//! and verification, with CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use chaingraph::graph::{GraphSpec, InitScheme, LayeredChainGraph};
use chaingraph::training::{evaluate, train, EpochRecord, TrainConfig, TrainMode};
use chaingraph::verify;
use chaingraph::Graph64;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MODEL_VERSION: u32 = 1;

/// Serialized graph plus parameters; weights keep full round-trip decimal
/// precision.
#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub scalar: String,
    pub graph: GraphSpec<f64>,
    pub params: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_graph(graph: &Graph64) -> Self {
        Self {
            version: MODEL_VERSION,
            scalar: "f64".to_string(),
            graph: graph.spec().clone(),
            params: graph.params().snapshot(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing model: {e}")))?;
        fs::write(path, json)
            .map_err(|e| CliError::Io(format!("writing `{}`: {e}", path.display())))
    }

    pub fn load(path: &str) -> Result<Graph64, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read model `{path}`: {e}")))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("model `{path}`: {e}")))?;
        if model.version != MODEL_VERSION {
            return Err(CliError::Config(format!(
                "model `{path}` has version {}, expected {MODEL_VERSION}",
                model.version
            )));
        }
        let mut graph = LayeredChainGraph::build(model.graph)
            .map_err(|e| CliError::Config(format!("model `{path}`: {e}")))?;
        let shapes = graph.params().shapes();
        if shapes.len() != model.params.len()
            || shapes
                .iter()
                .zip(&model.params)
                .any(|(&n, vals)| n != vals.len())
        {
            return Err(CliError::Config(format!(
                "model `{path}`: parameter shapes do not match the graph"
            )));
        }
        graph.params_mut().restore(&model.params);
        Ok(graph)
    }
}

fn ensure_out_dir(dir: &str) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(dir);
    fs::create_dir_all(&path)
        .map_err(|e| CliError::Io(format!("creating `{}`: {e}", path.display())))?;
    Ok(path)
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)
        .map_err(|e| CliError::Io(format!("writing `{}`: {e}", path.display())))
}

/// Graph prepared for one training method.
fn graph_for_mode(
    config: &ExperimentConfig,
    mode: &TrainMode<f64>,
) -> Result<Graph64, CliError> {
    let mut graph = config.build_graph()?;
    if matches!(mode, TrainMode::Dropout) && !graph.has_dropout() {
        let method = config.methods.dropout.as_ref().ok_or_else(|| {
            CliError::Config(
                "field `methods.dropout` is required for dropout training".into(),
            )
        })?;
        let ids: Vec<&str> = method.layers.iter().map(|s| s.as_str()).collect();
        graph
            .augment_dropout(&ids, method.keep_prob)
            .map_err(|e| CliError::Config(format!("field `methods.dropout`: {e}")))?;
    }
    Ok(graph)
}

fn train_config(config: &ExperimentConfig, seed: u64, mode: TrainMode<f64>) -> TrainConfig<f64> {
    TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        val_fraction: config.train.val_fraction,
        patience: config.train.patience,
        seed,
        mode,
        loss: config.train.loss,
        learning_rate: config.train.learning_rate,
        momentum: config.train.momentum,
    }
}

fn history_rows(run: usize, history: &[EpochRecord<f64>], rows: &mut Vec<Vec<String>>) {
    for r in history {
        rows.push(vec![
            run.to_string(),
            r.epoch.to_string(),
            format!("{}", r.train_loss),
            format!("{}", r.train_error),
            format!("{}", r.val_loss),
            format!("{}", r.val_error),
        ]);
    }
}

/// `train`: runs the configured training `runs` times; writes
/// `history.csv` and `model.json` (parameters of the last run).
pub fn cmd_train(config: &ExperimentConfig, out_dir: &str) -> Result<(), CliError> {
    let out = ensure_out_dir(out_dir)?;
    let (train_set, _test_set) = config.load_datasets()?;
    let mut rows = Vec::new();
    let mut last_graph: Option<Graph64> = None;
    for run in 0..config.runs {
        let seed = config.seed.wrapping_add(run as u64);
        let mut graph = graph_for_mode(config, &config.train.mode)?;
        graph.init_params(InitScheme::FanIn, seed);
        let tc = train_config(config, seed, config.train.mode);
        let history = train(&mut graph, &train_set, &tc)
            .map_err(|e| CliError::Config(format!("training failed: {e}")))?;
        if let Some(last) = history.last() {
            println!(
                "run {run}: {} epochs, train_loss={} train_err={} val_loss={} val_err={}",
                history.len(),
                last.train_loss,
                last.train_error,
                last.val_loss,
                last.val_error
            );
        }
        history_rows(run, &history, &mut rows);
        last_graph = Some(graph);
    }
    write_csv(
        &out.join("history.csv"),
        "run,epoch,train_loss,train_err,val_loss,val_err",
        &rows,
    )?;
    if let Some(graph) = last_graph {
        ModelFile::from_graph(&graph).save(&out.join("model.json"))?;
    }
    println!("wrote {}", out.join("history.csv").display());
    Ok(())
}

/// Stochastic-regularization methods compared by `compare`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    None,
    Dropout,
    Pcff,
}

impl Method {
    pub fn parse_list(text: &str) -> Result<Vec<Method>, CliError> {
        text.split(',')
            .map(|m| match m.trim() {
                "none" => Ok(Method::None),
                "dropout" => Ok(Method::Dropout),
                "pcff" => Ok(Method::Pcff),
                other => Err(CliError::Usage(format!(
                    "unknown method `{other}` (expected none, dropout, pcff)"
                ))),
            })
            .collect()
    }

    fn name(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Dropout => "dropout",
            Method::Pcff => "pcff",
        }
    }
}

/// `compare`: trains and evaluates each method on the test split; writes
/// `results.csv` with one row per run plus a mean row per method. Runs are
/// paired: run `r` uses the same seed for every method.
pub fn cmd_compare(
    config: &ExperimentConfig,
    methods: &[Method],
    out_dir: &str,
) -> Result<(), CliError> {
    let out = ensure_out_dir(out_dir)?;
    let (train_set, test_set) = config.load_datasets()?;
    // Resolve every method's mode up front so configuration errors surface
    // before any training starts.
    let modes: Vec<TrainMode<f64>> = methods
        .iter()
        .map(|method| match method {
            Method::None => Ok(TrainMode::FeedForward),
            Method::Dropout => {
                graph_for_mode(config, &TrainMode::Dropout)?;
                Ok(TrainMode::Dropout)
            }
            Method::Pcff => {
                let rate = config
                    .methods
                    .pcff
                    .as_ref()
                    .ok_or_else(|| {
                        CliError::Config(
                            "field `methods.pcff` is required for the pcff method".into(),
                        )
                    })?
                    .rate;
                Ok(TrainMode::Pcff { rate })
            }
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows = Vec::new();
    for (method, mode) in methods.iter().zip(modes) {
        let mut sum_err = 0.0;
        let mut sum_loss = 0.0;
        for run in 0..config.runs {
            let seed = config.seed.wrapping_add(run as u64);
            let mut graph = match method {
                Method::Dropout => graph_for_mode(config, &mode)?,
                _ => {
                    // The baseline and PCFF train without dropout even when
                    // the configured graph carries annotations.
                    let mut g = config.build_graph()?;
                    g.clear_dropout();
                    g
                }
            };
            graph.init_params(InitScheme::FanIn, seed);
            let tc = train_config(config, seed, mode);
            train(&mut graph, &train_set, &tc)
                .map_err(|e| CliError::Config(format!("training failed: {e}")))?;
            let metrics = evaluate(&graph, &test_set, config.train.loss)
                .map_err(|e| CliError::Config(format!("evaluation failed: {e}")))?;
            println!(
                "{} run {run}: test_err={} test_loss={}",
                method.name(),
                metrics.error_rate,
                metrics.mean_loss
            );
            sum_err += metrics.error_rate;
            sum_loss += metrics.mean_loss;
            rows.push(vec![
                method.name().to_string(),
                run.to_string(),
                format!("{}", metrics.error_rate),
                format!("{}", metrics.mean_loss),
                seed.to_string(),
            ]);
        }
        let n = config.runs as f64;
        rows.push(vec![
            method.name().to_string(),
            "mean".to_string(),
            format!("{}", sum_err / n),
            format!("{}", sum_loss / n),
            String::new(),
        ]);
    }
    write_csv(
        &out.join("results.csv"),
        "method,run,test_err,test_loss,seed",
        &rows,
    )?;
    println!("wrote {}", out.join("results.csv").display());
    Ok(())
}

/// `eval`: loads a saved model and evaluates it on the config's test split
/// in dropout test mode; writes `eval.csv`.
pub fn cmd_eval(
    model_path: &str,
    config: &ExperimentConfig,
    out_dir: &str,
) -> Result<(), CliError> {
    let out = ensure_out_dir(out_dir)?;
    let graph = ModelFile::load(model_path)?;
    let (_train, test_set) = config.load_datasets()?;
    let metrics = evaluate(&graph, &test_set, config.train.loss)
        .map_err(|e| CliError::Config(format!("evaluation failed: {e}")))?;
    println!(
        "test_loss={} test_error={}",
        metrics.mean_loss, metrics.error_rate
    );
    write_csv(
        &out.join("eval.csv"),
        "split,examples,loss,error",
        &[vec![
            "test".to_string(),
            test_set.len().to_string(),
            format!("{}", metrics.mean_loss),
            format!("{}", metrics.error_rate),
        ]],
    )?;
    Ok(())
}

/// `verify`: runs one named check (or all) and writes one CSV per check;
/// returns whether everything passed.
pub fn cmd_verify(
    check: &str,
    seed: u64,
    out_dir: &str,
    tolerance_override: Option<f64>,
) -> Result<bool, CliError> {
    let out = ensure_out_dir(out_dir)?;
    let reports = match check {
        "activations" => vec![verify::verify_activations::<f64>(
            &verify::ActivationCheckOptions {
                seed,
                tolerance_override,
                ..Default::default()
            },
        )],
        "marginals" => vec![verify::verify_marginals::<f64>(
            &verify::MarginalCheckOptions {
                seed,
                tolerance_override,
                ..Default::default()
            },
        )],
        "dropout_scaling" => vec![verify::verify_dropout_scaling::<f64>(
            &verify::DropoutCheckOptions {
                seed,
                tolerance_override,
                ..Default::default()
            },
        )],
        "residual" => vec![verify::verify_residual::<f64>(
            &verify::ResidualCheckOptions {
                seed,
                tolerance_override,
                ..Default::default()
            },
        )],
        "gradients" => vec![verify::verify_gradients::<f64>(
            &verify::GradientCheckOptions {
                seed,
                tolerance_override,
                ..Default::default()
            },
        )],
        "all" => {
            if let Some(tol) = tolerance_override {
                vec![
                    verify::verify_activations::<f64>(&verify::ActivationCheckOptions {
                        seed,
                        tolerance_override: Some(tol),
                        ..Default::default()
                    }),
                    verify::verify_marginals::<f64>(&verify::MarginalCheckOptions {
                        seed,
                        tolerance_override: Some(tol),
                        ..Default::default()
                    }),
                    verify::verify_dropout_scaling::<f64>(&verify::DropoutCheckOptions {
                        seed,
                        tolerance_override: Some(tol),
                        ..Default::default()
                    }),
                    verify::verify_residual::<f64>(&verify::ResidualCheckOptions {
                        seed,
                        tolerance_override: Some(tol),
                        ..Default::default()
                    }),
                    verify::verify_gradients::<f64>(&verify::GradientCheckOptions {
                        seed,
                        tolerance_override: Some(tol),
                        ..Default::default()
                    }),
                ]
            } else {
                verify::run_all::<f64>(seed)
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown check `{other}` (expected activations, marginals, dropout_scaling, residual, gradients, all)"
            )))
        }
    };

    let mut all_passed = true;
    for report in &reports {
        let path = out.join(format!("verify_{}.csv", report.check));
        let mut buf = Vec::new();
        report
            .write_csv(&mut buf)
            .map_err(|e| CliError::Io(format!("rendering report: {e}")))?;
        fs::write(&path, buf)
            .map_err(|e| CliError::Io(format!("writing `{}`: {e}", path.display())))?;
        println!("{}", report.summary_line());
        all_passed &= report.passed;
    }
    Ok(all_passed)
}
