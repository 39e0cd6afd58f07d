//! Forward passes over a layered chain graph.
//!
//! One engine drives every inference mode so that their deterministic parts
//! are arithmetically identical:
//!
//! * [`feed_forward`] — every node collapsed to its expected features
//!   `q = g(e)`, optionally with test-time dropout scaling;
//! * [`forward_sample`] — ancestral sampling: every non-input node drawn
//!   from its conditional given the sampled parents;
//! * [`pcff_forward`] — partially collapsed feed-forward: each node is
//!   independently sampled with probability `rate` and collapsed otherwise.
//!   Rate 0 reproduces `feed_forward` bitwise; rate 1 on a graph of
//!   continuous nodes reproduces reparameterized forward sampling bitwise;
//! * [`dropout_forward_train`] — collapsed nodes, with per-node Bernoulli
//!   indicators multiplying the outgoing contributions of annotated layers;
//! * [`forward_with_mask`] — replays a recorded stochastic pass, which is
//!   what gradient checking and the backward pass rely on.
//!
//! [`exact_marginals`] is the enumeration oracle: on sequential graphs of
//! discrete nodes it propagates the exact joint distribution over layer
//! configurations and reports per-node marginals next to the feed-forward
//! approximation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::NodeDistribution;
use crate::graph::{GraphError, LayeredChainGraph};
use crate::noise::{NoiseKind, PassNoise};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("input has dimension {got}, expected {expected} (all input layers concatenated)")]
    InputDimension { expected: usize, got: usize },
    #[error("sample rate {0} outside [0, 1]")]
    RateOutOfRange(String),
    #[error("unsupported structure for exact inference: {0}")]
    UnsupportedStructure(String),
}

/// Dropout handling during a deterministic pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    /// Ignore dropout annotations.
    Off,
    /// Marginalize the auxiliary Bernoulli nodes: scale every annotated
    /// layer's outgoing contributions by its keep probability.
    Test,
}

/// Activations of one forward pass: per-layer expected features `q` and the
/// cached preactivations `e` (empty for input layers). `q` of an input layer
/// is the supplied encoding.
#[derive(Clone, Debug)]
pub struct ActivationState<F> {
    q: Vec<Vec<F>>,
    e: Vec<Vec<F>>,
}

impl<F: Real> ActivationState<F> {
    pub fn q(&self, layer: usize) -> &[F] {
        &self.q[layer]
    }

    pub fn e(&self, layer: usize) -> &[F] {
        &self.e[layer]
    }

    /// Activations of the last layer.
    pub fn output(&self) -> &[F] {
        self.q.last().expect("graph has layers")
    }

    pub fn layer_count(&self) -> usize {
        self.q.len()
    }
}

/// How one node was treated during a stochastic pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeFlag<F> {
    /// Deterministic feed-forward through `g`.
    Collapsed,
    /// Sampled with the reparameterization trick; `z` is the recorded
    /// standard-normal noise.
    SampledContinuous { z: F },
    /// Sampled from a discrete conditional; carries no pathwise gradient.
    SampledDiscrete,
}

/// Record of every stochastic decision of one pass, sufficient to replay it.
#[derive(Clone, Debug)]
pub struct StochasticMask<F> {
    pub pass: PassNoise,
    /// Per layer, per node; empty for input layers.
    pub flags: Vec<Vec<NodeFlag<F>>>,
    /// Per layer: 0/1 keep indicator per node, present on annotated layers.
    pub dropout: Vec<Option<Vec<F>>>,
}

impl<F: Real> StochasticMask<F> {
    /// All nodes collapsed, no dropout: the mask of a plain feed-forward.
    pub fn collapsed(graph: &LayeredChainGraph<F>) -> Self {
        let flags = (0..graph.layer_count())
            .map(|l| {
                if graph.layer(l).is_input {
                    Vec::new()
                } else {
                    vec![NodeFlag::Collapsed; graph.layer(l).size]
                }
            })
            .collect();
        Self {
            pass: PassNoise::new(0, 0),
            flags,
            dropout: vec![None; graph.layer_count()],
        }
    }

    /// Number of sampled (uncollapsed) nodes.
    pub fn sampled_count(&self) -> usize {
        self.flags
            .iter()
            .flatten()
            .filter(|f| !matches!(f, NodeFlag::Collapsed))
            .count()
    }
}

enum Mode<'a, F> {
    Deterministic(DropoutMode),
    Sample(&'a PassNoise),
    Pcff {
        rate: F,
        noise: &'a PassNoise,
        /// Layer kept collapsed regardless of the rate (the loss layer
        /// during training).
        keep_collapsed: Option<usize>,
    },
    DropoutTrain(&'a PassNoise),
    Replay(&'a StochasticMask<F>),
}

/// Deterministic feed-forward pass: `q^l = g^l(e^l)` in topological order.
pub fn feed_forward<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    dropout: DropoutMode,
) -> Result<ActivationState<F>, InferenceError> {
    run_forward(graph, input, Mode::Deterministic(dropout)).map(|(state, _)| state)
}

/// Ancestral sampling: every non-input node is drawn from its nodewise
/// conditional given its parents' sampled features.
pub fn forward_sample<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    noise: &PassNoise,
) -> Result<ActivationState<F>, InferenceError> {
    run_forward(graph, input, Mode::Sample(noise)).map(|(state, _)| state)
}

/// Partially collapsed feed-forward: each non-input node is sampled with
/// probability `rate` (reparameterized when continuous) and collapsed
/// otherwise. The returned mask records every decision for the backward
/// pass.
pub fn pcff_forward<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    rate: F,
    noise: &PassNoise,
) -> Result<(ActivationState<F>, StochasticMask<F>), InferenceError> {
    if !(rate >= F::zero() && rate <= F::one()) {
        return Err(InferenceError::RateOutOfRange(format!("{rate}")));
    }
    run_forward(
        graph,
        input,
        Mode::Pcff {
            rate,
            noise,
            keep_collapsed: None,
        },
    )
}

/// PCFF pass for training: identical to [`pcff_forward`] except that the
/// given layer (the one the loss reads) stays collapsed, keeping the loss a
/// function of the output distribution.
pub fn pcff_training_forward<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    rate: F,
    noise: &PassNoise,
    loss_layer: usize,
) -> Result<(ActivationState<F>, StochasticMask<F>), InferenceError> {
    if !(rate >= F::zero() && rate <= F::one()) {
        return Err(InferenceError::RateOutOfRange(format!("{rate}")));
    }
    run_forward(
        graph,
        input,
        Mode::Pcff {
            rate,
            noise,
            keep_collapsed: Some(loss_layer),
        },
    )
}

/// Training-time dropout pass: collapsed nodes, with `d ~ Bernoulli(keep)`
/// drawn once per annotated node and multiplied into all of its outgoing
/// contributions.
pub fn dropout_forward_train<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    noise: &PassNoise,
) -> Result<(ActivationState<F>, StochasticMask<F>), InferenceError> {
    run_forward(graph, input, Mode::DropoutTrain(noise))
}

/// Replays a recorded pass: collapse decisions, reparameterization noise and
/// dropout indicators are taken from `mask` instead of being redrawn.
/// Discrete sampled nodes are redrawn from the mask's pass noise, which
/// reproduces the original draw for unchanged parameters.
pub fn forward_with_mask<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    mask: &StochasticMask<F>,
) -> Result<ActivationState<F>, InferenceError> {
    run_forward(graph, input, Mode::Replay(mask)).map(|(state, _)| state)
}

fn run_forward<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
    mode: Mode<'_, F>,
) -> Result<(ActivationState<F>, StochasticMask<F>), InferenceError> {
    let n = graph.layer_count();
    let input_dim: usize = graph.input_layers().iter().map(|&l| graph.dim(l)).sum();
    if input.len() != input_dim {
        return Err(InferenceError::InputDimension {
            expected: input_dim,
            got: input.len(),
        });
    }

    let mut q: Vec<Vec<F>> = vec![Vec::new(); n];
    let mut e: Vec<Vec<F>> = vec![Vec::new(); n];
    // Activations as seen by child layers: equal to q except for layers
    // whose outgoing contributions are scaled by dropout.
    let mut prop: Vec<Option<Vec<F>>> = vec![None; n];
    let mut flags: Vec<Vec<NodeFlag<F>>> = vec![Vec::new(); n];
    let mut dropout_record: Vec<Option<Vec<F>>> = vec![None; n];

    let pass = match &mode {
        Mode::Sample(noise) | Mode::DropoutTrain(noise) => **noise,
        Mode::Pcff { noise, .. } => **noise,
        Mode::Replay(mask) => mask.pass,
        Mode::Deterministic(_) => PassNoise::new(0, 0),
    };

    let mut offset = 0;
    for l in 0..n {
        let layer = graph.layer(l);
        let dim = graph.dim(l);
        if layer.is_input {
            q[l] = input[offset..offset + dim].to_vec();
            offset += dim;
        } else {
            // e^l = b^l + sum over connections of W * prop[parent].
            let mut e_l = std::mem::take(&mut e[l]);
            match graph.bias_slot_idx(l) {
                Some(slot) => e_l.extend_from_slice(graph.params().values(slot)),
                None => e_l.resize(dim, F::zero()),
            }
            for &ci in graph.incoming(l) {
                let conn = &graph.connections()[ci];
                let p = conn.parent();
                let view: &[F] = prop[p].as_deref().unwrap_or(&q[p]);
                conn.apply(graph.params().values(conn.weight_slot()), view, &mut e_l);
            }

            let dist = layer.dist;
            let d = dist.feature_dim();
            let mut q_l = vec![F::zero(); dim];
            let mut node_flags = vec![NodeFlag::Collapsed; layer.size];
            for i in 0..layer.size {
                let e_node = &e_l[i * d..(i + 1) * d];
                let q_node = &mut q_l[i * d..(i + 1) * d];
                let decision = match &mode {
                    Mode::Deterministic(_) | Mode::DropoutTrain(_) => NodeFlag::Collapsed,
                    Mode::Sample(_) => sampled_flag(&dist),
                    Mode::Pcff {
                        rate,
                        noise,
                        keep_collapsed,
                    } => {
                        if *keep_collapsed == Some(l) {
                            NodeFlag::Collapsed
                        } else {
                            let mut rng = noise.node_rng(NoiseKind::Collapse, l, i);
                            if F::unit_uniform(&mut rng) < *rate {
                                sampled_flag(&dist)
                            } else {
                                NodeFlag::Collapsed
                            }
                        }
                    }
                    Mode::Replay(mask) => mask.flags[l][i],
                };
                match decision {
                    NodeFlag::Collapsed => {
                        dist.activation_mean_into(e_node, q_node);
                        node_flags[i] = NodeFlag::Collapsed;
                    }
                    NodeFlag::SampledContinuous { z } => {
                        // For a fresh pass the placeholder z from
                        // `sampled_flag` is replaced by the node's draw.
                        let z = match &mode {
                            Mode::Replay(_) => z,
                            _ => {
                                let mut rng = pass.node_rng(NoiseKind::Value, l, i);
                                F::std_normal(&mut rng)
                            }
                        };
                        let (x, _) = dist
                            .sample_reparam(e_node[0], z)
                            .expect("continuous flag implies rectified-Gaussian node");
                        q_node[0] = x;
                        node_flags[i] = NodeFlag::SampledContinuous { z };
                    }
                    NodeFlag::SampledDiscrete => {
                        let mut rng = pass.node_rng(NoiseKind::Value, l, i);
                        let value = dist.sample(e_node, &mut rng);
                        dist.features_into(value, q_node)
                            .expect("sampled values lie in the support");
                        node_flags[i] = NodeFlag::SampledDiscrete;
                    }
                }
            }
            e[l] = e_l;
            q[l] = q_l;
            flags[l] = node_flags;
        }

        // Scale the layer's outgoing view when dropout applies to it.
        if let Some(keep) = graph.dropout_keep(l) {
            match &mode {
                Mode::Deterministic(DropoutMode::Test) => {
                    prop[l] = Some(q[l].iter().map(|&v| v * keep).collect());
                }
                Mode::DropoutTrain(noise) => {
                    let d = graph.layer(l).dist.feature_dim();
                    let size = graph.layer(l).size;
                    let mut indicators = vec![F::zero(); size];
                    for (i, ind) in indicators.iter_mut().enumerate() {
                        let mut rng = noise.node_rng(NoiseKind::Dropout, l, i);
                        if F::unit_uniform(&mut rng) < keep {
                            *ind = F::one();
                        }
                    }
                    prop[l] = Some(scale_by_node(&q[l], &indicators, d));
                    dropout_record[l] = Some(indicators);
                }
                Mode::Replay(mask) => {
                    if let Some(indicators) = &mask.dropout[l] {
                        let d = graph.layer(l).dist.feature_dim();
                        prop[l] = Some(scale_by_node(&q[l], indicators, d));
                        dropout_record[l] = Some(indicators.clone());
                    }
                }
                _ => {}
            }
        }
    }

    Ok((
        ActivationState { q, e },
        StochasticMask {
            pass,
            flags,
            dropout: dropout_record,
        },
    ))
}

fn sampled_flag<F: Real>(dist: &NodeDistribution<F>) -> NodeFlag<F> {
    if dist.is_continuous() {
        NodeFlag::SampledContinuous { z: F::zero() }
    } else {
        NodeFlag::SampledDiscrete
    }
}

pub(crate) fn scale_by_node<F: Real>(q: &[F], per_node: &[F], feature_dim: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(q.len());
    for (i, &v) in q.iter().enumerate() {
        out.push(v * per_node[i / feature_dim]);
    }
    out
}

/// Exact marginal of one non-input node, next to its feed-forward value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeMarginal<F> {
    pub layer: String,
    pub node: usize,
    /// Probability of each node state (2 entries for binary, `c` for
    /// multilabel).
    pub table: Vec<F>,
    /// Exact expected features.
    pub mean: Vec<F>,
    /// Feed-forward expected features.
    pub feed_forward: Vec<F>,
    /// `max_i |mean_i - feed_forward_i|`.
    pub abs_error: F,
}

/// Exact per-node marginals of a sequential discrete graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalReport<F> {
    pub nodes: Vec<NodeMarginal<F>>,
    pub max_abs_error: F,
}

/// Exact inference by enumeration on a sequential graph (each layer's only
/// parent is its predecessor) whose non-input nodes are all discrete and
/// whose per-layer configuration spaces have at most `2^20` states. The
/// joint distribution over each layer's configurations is propagated layer
/// by layer; per-node marginals and means are reported alongside the
/// feed-forward values.
pub fn exact_marginals<F: Real>(
    graph: &LayeredChainGraph<F>,
    input: &[F],
) -> Result<MarginalReport<F>, InferenceError> {
    let n = graph.layer_count();
    if n == 0 || !graph.layer(0).is_input {
        return Err(InferenceError::UnsupportedStructure(
            "the first layer must be the input".into(),
        ));
    }
    for l in 1..n {
        if graph.layer(l).is_input {
            return Err(InferenceError::UnsupportedStructure(
                "exactly one input layer is supported".into(),
            ));
        }
        let parents: Vec<usize> = graph
            .connections()
            .iter()
            .filter(|c| c.child() == l)
            .map(|c| c.parent())
            .collect();
        if parents != vec![l - 1] {
            return Err(InferenceError::UnsupportedStructure(format!(
                "layer `{}` must have exactly its predecessor as parent",
                graph.layer(l).id
            )));
        }
        let states = match graph.layer(l).dist {
            NodeDistribution::Binary { .. } => 2usize,
            NodeDistribution::Multilabel { classes } => classes,
            NodeDistribution::RectifiedGaussian { .. } => {
                return Err(InferenceError::UnsupportedStructure(format!(
                    "layer `{}` holds continuous nodes",
                    graph.layer(l).id
                )))
            }
        };
        let space = (states as f64).powi(graph.layer(l).size as i32);
        if space > (1u64 << 20) as f64 {
            return Err(InferenceError::UnsupportedStructure(format!(
                "layer `{}` has {space} configurations, more than 2^20",
                graph.layer(l).id
            )));
        }
    }

    let ff = feed_forward(graph, input, DropoutMode::Off)?;

    let one = F::one();
    let mut nodes = Vec::new();
    let mut max_abs_error = F::zero();

    // Joint distribution over the previous layer's configurations, plus the
    // feature vector of each configuration.
    let mut prev_dist: Vec<F> = vec![one];
    let mut prev_features: Vec<Vec<F>> = vec![input.to_vec()];

    for l in 1..n {
        let layer = graph.layer(l);
        let dist = layer.dist;
        let size = layer.size;
        let d = dist.feature_dim();
        let states = match dist {
            NodeDistribution::Binary { .. } => 2,
            NodeDistribution::Multilabel { classes } => classes,
            NodeDistribution::RectifiedGaussian { .. } => unreachable!(),
        };
        let space = states.pow(size as u32);

        let mut next_dist = vec![F::zero(); space];
        let mut node_tables = vec![vec![F::zero(); states]; size];
        let mut acts: Vec<Vec<F>> = vec![Vec::new(); n];
        let mut joint = vec![F::zero(); space];

        for (cfg_prob, cfg_feat) in prev_dist.iter().zip(prev_features.iter()) {
            // Conditional tables of every node given this parent
            // configuration.
            acts[l - 1] = cfg_feat.clone();
            let mut e_l = Vec::new();
            graph.preactivation_into(l, &acts, &mut e_l);
            let mut tables = vec![F::zero(); size * states];
            for i in 0..size {
                let e_node = &e_l[i * d..(i + 1) * d];
                match dist {
                    NodeDistribution::Binary { alpha, beta } => {
                        // P(beta) derived from the activation mean, so the
                        // zero-weight case reproduces feed-forward exactly.
                        let mut g = [F::zero()];
                        dist.activation_mean_into(e_node, &mut g);
                        let p_beta = (g[0] - alpha) / (beta - alpha);
                        tables[i * states] = one - p_beta;
                        tables[i * states + 1] = p_beta;
                    }
                    NodeDistribution::Multilabel { .. } => {
                        crate::distributions::softmax_into(
                            e_node,
                            &mut tables[i * states..(i + 1) * states],
                        );
                    }
                    NodeDistribution::RectifiedGaussian { .. } => unreachable!(),
                }
            }
            // Joint conditional over child configurations: iterative outer
            // product of the per-node tables.
            joint[0] = one;
            let mut len = 1;
            for i in 0..size {
                for cfg in (0..len).rev() {
                    let base = joint[cfg];
                    for s in 0..states {
                        joint[cfg * states + s] = base * tables[i * states + s];
                    }
                }
                len *= states;
            }
            for (nd, &j) in next_dist.iter_mut().zip(joint.iter()) {
                *nd = *nd + *cfg_prob * j;
            }
        }

        // Per-node marginal tables from the layer joint. Configuration
        // digits are ordered so node 0 varies slowest.
        for (cfg, &p) in next_dist.iter().enumerate() {
            let mut rest = cfg;
            for i in (0..size).rev() {
                let s = rest % states;
                rest /= states;
                node_tables[i][s] = node_tables[i][s] + p;
            }
        }

        // Feature vector of every configuration, for the next transition.
        let mut next_features = Vec::with_capacity(space);
        for cfg in 0..space {
            let mut feat = vec![F::zero(); size * d];
            let mut rest = cfg;
            for i in (0..size).rev() {
                let s = rest % states;
                rest /= states;
                match dist {
                    NodeDistribution::Binary { alpha, beta } => {
                        feat[i] = if s == 0 { alpha } else { beta };
                    }
                    NodeDistribution::Multilabel { .. } => {
                        feat[i * d + s] = one;
                    }
                    NodeDistribution::RectifiedGaussian { .. } => unreachable!(),
                }
            }
            next_features.push(feat);
        }

        for (i, table) in node_tables.iter().enumerate() {
            let mean: Vec<F> = match dist {
                NodeDistribution::Binary { alpha, beta } => {
                    vec![alpha * table[0] + beta * table[1]]
                }
                NodeDistribution::Multilabel { .. } => table.clone(),
                NodeDistribution::RectifiedGaussian { .. } => unreachable!(),
            };
            let ff_mean = ff.q(l)[i * d..(i + 1) * d].to_vec();
            let abs_error = mean
                .iter()
                .zip(ff_mean.iter())
                .map(|(a, b)| (*a - *b).abs())
                .fold(F::zero(), F::max);
            max_abs_error = max_abs_error.max(abs_error);
            nodes.push(NodeMarginal {
                layer: layer.id.clone(),
                node: i,
                table: table.clone(),
                mean,
                feed_forward: ff_mean,
                abs_error,
            });
        }

        prev_dist = next_dist;
        prev_features = next_features;
    }

    Ok(MarginalReport {
        nodes,
        max_abs_error,
    })
}
