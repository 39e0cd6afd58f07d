//! Experiment configuration: JSON schema and graph/dataset assembly.
//!
//! A config file describes one experiment:
//!
//! ```json
//! {
//!   "seed": 42,
//!   "runs": 3,
//!   "out_dir": "out",
//!   "graph": {
//!     "layers": [
//!       {"id": "in", "size": 784, "input": true,
//!        "dist": {"family": "binary", "alpha": 0.0, "beta": 1.0}},
//!       {"id": "h1", "size": 256,
//!        "dist": {"family": "rectified_gaussian", "leak": 0.0,
//!                 "std": {"policy": "tanh_modulated"}}},
//!       {"id": "out", "size": 1,
//!        "dist": {"family": "multilabel", "classes": 10}}
//!     ],
//!     "builders": [
//!       {"kind": "dropout", "layers": ["h1"], "keep_prob": 0.5}
//!     ]
//!   },
//!   "dataset": {"kind": "idx", "train_images": "...", "train_labels": "...",
//!               "test_images": "...", "test_labels": "...", "classes": 10},
//!   "train": {"epochs": 15, "batch_size": 32, "val_fraction": 0.2,
//!             "patience": 10, "learning_rate": 0.01, "momentum": 0.9,
//!             "loss": "cross_entropy", "mode": {"kind": "feed_forward"}},
//!   "methods": {"dropout": {"layers": ["h1"], "keep_prob": 0.5},
//!               "pcff": {"rate": 0.4}}
//! }
//! ```
//!
//! `graph.connections` may be omitted for a sequential dense chain.
//! Builder steps run in order: `refinement` splices a residual fragment
//! whose base input must already exist, `recurrent` unrolls the graph so
//! far over time steps, and `dropout` annotates layers. An optional
//! `graph.head` appends one dense-connected output layer after all
//! builders, which is how a readout attaches to the last step of an
//! unrolled recurrence.

use serde::{Deserialize, Serialize};

use chaingraph::data::{self, Dataset};
use chaingraph::graph::{
    build_recurrent_unrolled, build_refinement, ConnectionSpec, GraphSpec, LayerSpec,
    RecurrentMode, Submodule,
};
use chaingraph::training::{LossSpec, TrainMode};
use chaingraph::{Graph64, LayeredChainGraph, NodeDistribution};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub graph: GraphConfig,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub methods: MethodsSection,
}

fn default_runs() -> usize {
    1
}

fn default_out_dir() -> String {
    "out".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphConfig {
    pub layers: Vec<LayerSpec<f64>>,
    /// Explicit connections; omitted means a sequential dense chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connections: Option<Vec<ConnectionSpec>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub builders: Vec<BuilderStep>,
    /// Output layer appended after all builders, densely connected from the
    /// then-last layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadConfig {
    pub id: String,
    pub size: usize,
    pub dist: NodeDistribution<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuilderStep {
    Refinement {
        base: SubmoduleConfig,
        refining: SubmoduleConfig,
    },
    Recurrent {
        layers: Vec<String>,
        steps: usize,
        mode: RecurrentMode,
    },
    Dropout {
        layers: Vec<String>,
        keep_prob: f64,
    },
}

/// A submodule given as layers plus optional connections (default: chain).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmoduleConfig {
    pub layers: Vec<LayerSpec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connections: Option<Vec<ConnectionSpec>>,
}

impl SubmoduleConfig {
    fn into_submodule(self) -> Submodule<f64> {
        match self.connections {
            Some(connections) => Submodule {
                layers: self.layers,
                connections,
            },
            None => Submodule::chain(self.layers),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// IDX image/label file pairs; paths are user-supplied.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
    },
    Sequences {
        length: usize,
        train: usize,
        test: usize,
    },
}

fn default_classes() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossSpec,
    pub mode: TrainMode<f64>,
}

fn default_patience() -> usize {
    10
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<DropoutMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcff: Option<PcffMethod>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DropoutMethod {
    pub layers: Vec<String>,
    pub keep_prob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcffMethod {
    pub rate: f64,
}

impl ExperimentConfig {
    pub fn load(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{path}`: {e}")))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config `{path}`: {e}")))?;
        if config.runs == 0 {
            return Err(CliError::Config("field `runs` must be at least 1".into()));
        }
        Ok(config)
    }

    /// Assembles the graph description: base layers/connections, then the
    /// builder steps in order, then the optional head layer.
    pub fn graph_spec(&self) -> Result<GraphSpec<f64>, CliError> {
        let mut spec = match &self.graph.connections {
            Some(connections) => {
                GraphSpec::new(self.graph.layers.clone(), connections.clone())
            }
            None => GraphSpec::sequential(self.graph.layers.clone()),
        };

        for step in &self.graph.builders {
            match step.clone() {
                BuilderStep::Refinement { base, refining } => {
                    let base = base.into_submodule();
                    let attach = base.input().id.clone();
                    if !spec.layers.iter().any(|l| l.id == attach) {
                        return Err(CliError::Config(format!(
                            "field `graph.builders.refinement`: base input `{attach}` is not a declared layer"
                        )));
                    }
                    let fragment = build_refinement(&base, &refining.into_submodule())
                        .map_err(|e| {
                            CliError::Config(format!("field `graph.builders.refinement`: {e}"))
                        })?;
                    for layer in fragment.layers {
                        if layer.id != attach {
                            spec.layers.push(layer);
                        }
                    }
                    spec.connections.extend(fragment.connections);
                }
                BuilderStep::Recurrent {
                    layers,
                    steps,
                    mode,
                } => {
                    let ids: Vec<&str> = layers.iter().map(|s| s.as_str()).collect();
                    spec = build_recurrent_unrolled(&spec, &ids, steps, mode).map_err(|e| {
                        CliError::Config(format!("field `graph.builders.recurrent`: {e}"))
                    })?;
                }
                BuilderStep::Dropout { layers, keep_prob } => {
                    for layer in layers {
                        spec.dropout.push(chaingraph::graph::DropoutSpec {
                            layer,
                            keep_prob,
                        });
                    }
                }
            }
        }

        if let Some(head) = &self.graph.head {
            let last = spec
                .layers
                .last()
                .ok_or_else(|| CliError::Config("field `graph.layers` is empty".into()))?
                .id
                .clone();
            spec.layers.push(LayerSpec::hidden(
                head.id.clone(),
                head.size,
                head.dist,
            ));
            spec.connections
                .push(ConnectionSpec::dense(last, head.id.clone()));
        }
        Ok(spec)
    }

    /// Builds the runtime graph, reporting violations as config errors.
    pub fn build_graph(&self) -> Result<Graph64, CliError> {
        let spec = self.graph_spec()?;
        LayeredChainGraph::build(spec)
            .map_err(|e| CliError::Config(format!("field `graph`: {e}")))
    }

    /// Loads `(train, test)` datasets.
    pub fn load_datasets(&self) -> Result<(Dataset<f64>, Dataset<f64>), CliError> {
        match &self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
                train_limit,
                test_limit,
            } => {
                let train_raw = data::load_idx(train_images, train_labels)
                    .map_err(|e| CliError::Config(format!("field `dataset`: {e}")))?;
                let test_raw = data::load_idx(test_images, test_labels)
                    .map_err(|e| CliError::Config(format!("field `dataset`: {e}")))?;
                let mut train = data::to_dataset::<f64>(&train_raw, *classes);
                let mut test = data::to_dataset::<f64>(&test_raw, *classes);
                if let Some(n) = train_limit {
                    train = train.take(*n);
                }
                if let Some(n) = test_limit {
                    test = test.take(*n);
                }
                Ok((train, test))
            }
            DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
            } => {
                // One generation shares the centroids; the per-class tail
                // becomes the test set.
                let all = data::synth_blobs::<f64>(
                    *classes,
                    per_class + test_per_class,
                    *dim,
                    *separation,
                    self.seed,
                )
                .map_err(|e| CliError::Config(format!("field `dataset`: {e}")))?;
                let total = per_class + test_per_class;
                let mut train_ex = Vec::new();
                let mut test_ex = Vec::new();
                for (i, ex) in all.examples.into_iter().enumerate() {
                    if i % total < *per_class {
                        train_ex.push(ex);
                    } else {
                        test_ex.push(ex);
                    }
                }
                Ok((
                    Dataset::new(train_ex, *dim, *classes),
                    Dataset::new(test_ex, *dim, *classes),
                ))
            }
            DatasetConfig::Sequences {
                length,
                train,
                test,
            } => {
                let train_set = data::synth_sequences(*length, *train, self.seed)
                    .map_err(|e| CliError::Config(format!("field `dataset`: {e}")))?;
                let test_set = data::synth_sequences(
                    *length,
                    *test,
                    self.seed.wrapping_add(0x7E57),
                )
                .map_err(|e| CliError::Config(format!("field `dataset`: {e}")))?;
                Ok((train_set, test_set))
            }
        }
    }
}
