//! Loss evaluation, reverse-mode gradients, SGD with momentum, and the
//! train/evaluate loops.
//!
//! The backward pass sweeps layers in reverse topological order. Collapsed
//! nodes differentiate through the activation `g`; sampled continuous nodes
//! use the pathwise derivative recomputed from their recorded noise; sampled
//! discrete nodes stop the gradient. Dropout indicators are constants of the
//! pass. Tied parameters accumulate into their shared slot, and
//! non-trainable slots keep zero gradients.
//!
//! Training is deterministic for a fixed master seed: the validation split,
//! epoch shuffles and all per-pass noise derive from it. Early stopping
//! tracks the validation loss and restores the best parameters seen.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::distributions::{softmax_backward, softmax_into, NodeDistribution};
use crate::graph::{LayeredChainGraph, ParameterStore, SlotId};
use crate::inference::{
    dropout_forward_train, feed_forward, pcff_training_forward, ActivationState, DropoutMode,
    InferenceError, NodeFlag, StochasticMask,
};
use crate::linalg;
use crate::noise::{derive_rng, PassNoise};
use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("loss incompatible with the output layer: {0}")]
    IncompatibleLoss(String),
    #[error("target label {label} outside the output dimension {dim}")]
    TargetOutOfRange { label: usize, dim: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training split is empty")]
    EmptyTrainingSplit,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Loss over the output layer's expected features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `-ln q^L[target]`, fused with the softmax through a log-sum-exp over
    /// the cached output preactivations. Requires a single multilabel
    /// output node.
    CrossEntropy,
    /// `||q^L - target||^2` against a one-hot (or explicit) target vector.
    SquaredError,
}

/// A supervision target for one example.
#[derive(Clone, Debug)]
pub enum Target<'a, F> {
    /// Class index, `0`-based.
    Class(usize),
    Vector(&'a [F]),
}

/// Gradient of the loss with respect to the output layer.
#[derive(Clone, Debug)]
pub enum OutputGradient<F> {
    /// `dL/dq^L`; the backward pass applies the output activation Jacobian.
    Features(Vec<F>),
    /// `dL/de^L` directly (the fused cross-entropy path).
    Preactivation(Vec<F>),
}

impl LossSpec {
    /// Checks that the graph's last layer can carry this loss.
    pub fn check_output<F: Real>(&self, graph: &LayeredChainGraph<F>) -> Result<(), TrainingError> {
        if graph.layer_count() == 0 {
            return Err(TrainingError::IncompatibleLoss("graph has no layers".into()));
        }
        let last = graph.layer(graph.layer_count() - 1);
        match self {
            LossSpec::CrossEntropy => match last.dist {
                NodeDistribution::Multilabel { .. } if last.size == 1 => Ok(()),
                NodeDistribution::Multilabel { .. } => Err(TrainingError::IncompatibleLoss(
                    "cross-entropy needs a single multilabel output node".into(),
                )),
                _ => Err(TrainingError::IncompatibleLoss(
                    "cross-entropy needs a multilabel output layer".into(),
                )),
            },
            LossSpec::SquaredError => Ok(()),
        }
    }

    /// Scalar loss from the output activations `q` and cached
    /// preactivations `e`.
    pub fn eval<F: Real>(&self, q: &[F], e: &[F], target: &Target<'_, F>) -> Result<F, TrainingError> {
        match (self, target) {
            (LossSpec::CrossEntropy, Target::Class(t)) => {
                if *t >= e.len() {
                    return Err(TrainingError::TargetOutOfRange {
                        label: *t,
                        dim: e.len(),
                    });
                }
                let max = e.iter().cloned().fold(F::neg_infinity(), F::max);
                let total: F = e.iter().map(|&v| (v - max).exp()).sum();
                Ok(max + total.ln() - e[*t])
            }
            (LossSpec::SquaredError, Target::Vector(t)) => {
                if t.len() != q.len() {
                    return Err(TrainingError::ShapeMismatch(format!(
                        "target has dimension {}, output {}",
                        t.len(),
                        q.len()
                    )));
                }
                Ok(q.iter()
                    .zip(t.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum())
            }
            (LossSpec::CrossEntropy, Target::Vector(_)) => Err(TrainingError::IncompatibleLoss(
                "cross-entropy takes a class target".into(),
            )),
            (LossSpec::SquaredError, Target::Class(t)) => {
                // One-hot convenience encoding.
                if *t >= q.len() {
                    return Err(TrainingError::TargetOutOfRange {
                        label: *t,
                        dim: q.len(),
                    });
                }
                let one_hot: Vec<F> = (0..q.len())
                    .map(|i| if i == *t { F::one() } else { F::zero() })
                    .collect();
                self.eval(q, e, &Target::Vector(&one_hot))
            }
        }
    }

    /// Gradient of the loss at the output layer.
    pub fn output_gradient<F: Real>(
        &self,
        q: &[F],
        e: &[F],
        target: &Target<'_, F>,
    ) -> Result<OutputGradient<F>, TrainingError> {
        match (self, target) {
            (LossSpec::CrossEntropy, Target::Class(t)) => {
                if *t >= e.len() {
                    return Err(TrainingError::TargetOutOfRange {
                        label: *t,
                        dim: e.len(),
                    });
                }
                let mut g = vec![F::zero(); e.len()];
                softmax_into(e, &mut g);
                g[*t] = g[*t] - F::one();
                Ok(OutputGradient::Preactivation(g))
            }
            (LossSpec::SquaredError, Target::Vector(t)) => {
                if t.len() != q.len() {
                    return Err(TrainingError::ShapeMismatch(format!(
                        "target has dimension {}, output {}",
                        t.len(),
                        q.len()
                    )));
                }
                let two = real::<F>(2.0);
                Ok(OutputGradient::Features(
                    q.iter().zip(t.iter()).map(|(&a, &b)| two * (a - b)).collect(),
                ))
            }
            (LossSpec::SquaredError, Target::Class(t)) => {
                if *t >= q.len() {
                    return Err(TrainingError::TargetOutOfRange {
                        label: *t,
                        dim: q.len(),
                    });
                }
                let one_hot: Vec<F> = (0..q.len())
                    .map(|i| if i == *t { F::one() } else { F::zero() })
                    .collect();
                self.output_gradient(q, e, &Target::Vector(&one_hot))
            }
            (LossSpec::CrossEntropy, Target::Vector(_)) => Err(TrainingError::IncompatibleLoss(
                "cross-entropy takes a class target".into(),
            )),
        }
    }
}

/// Free-function form of [`LossSpec::eval`]: the scalar loss over the
/// output layer's expected features `q` (squared error) or cached
/// preactivations `e` (cross-entropy).
pub fn loss_eval<F: Real>(
    spec: LossSpec,
    q: &[F],
    e: &[F],
    target: &Target<'_, F>,
) -> Result<F, TrainingError> {
    spec.eval(q, e, target)
}

/// Per-parameter gradients, congruent to the parameter store; tied groups
/// accumulate into one buffer and non-trainable slots stay zero.
#[derive(Clone, Debug)]
pub struct GradientSet<F> {
    buffers: Vec<Vec<F>>,
}

impl<F: Real> GradientSet<F> {
    pub fn zeros_like(params: &ParameterStore<F>) -> Self {
        Self {
            buffers: params.shapes().iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn slot(&self, id: SlotId) -> &[F] {
        &self.buffers[id]
    }

    pub fn reset(&mut self) {
        for buf in &mut self.buffers {
            for v in buf.iter_mut() {
                *v = F::zero();
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for buf in &mut self.buffers {
            for v in buf.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn max_abs(&self) -> F {
        self.buffers
            .iter()
            .flatten()
            .fold(F::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.buffers.iter().flatten().all(|&v| v == F::zero())
    }
}

/// Reverse-mode gradients of one forward pass; see the module docs for the
/// node-flag semantics.
pub fn backward<F: Real>(
    graph: &LayeredChainGraph<F>,
    state: &ActivationState<F>,
    mask: &StochasticMask<F>,
    output_grad: OutputGradient<F>,
) -> Result<GradientSet<F>, TrainingError> {
    let mut grads = GradientSet::zeros_like(graph.params());
    backward_into(graph, state, mask, output_grad, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but accumulates into an existing gradient set, which
/// is how mini-batches avoid reallocating.
pub fn backward_into<F: Real>(
    graph: &LayeredChainGraph<F>,
    state: &ActivationState<F>,
    mask: &StochasticMask<F>,
    output_grad: OutputGradient<F>,
    grads: &mut GradientSet<F>,
) -> Result<(), TrainingError> {
    let n = graph.layer_count();
    if state.layer_count() != n || mask.flags.len() != n {
        return Err(TrainingError::ShapeMismatch(
            "state/mask do not belong to this graph".into(),
        ));
    }
    let last = n - 1;
    let out_dim = graph.dim(last);

    let mut dq: Vec<Vec<F>> = (0..n).map(|l| vec![F::zero(); graph.dim(l)]).collect();
    let mut de_direct: Option<Vec<F>> = None;
    match output_grad {
        OutputGradient::Features(v) => {
            if v.len() != out_dim {
                return Err(TrainingError::ShapeMismatch(format!(
                    "output gradient has dimension {}, expected {out_dim}",
                    v.len()
                )));
            }
            dq[last] = v;
        }
        OutputGradient::Preactivation(v) => {
            if v.len() != out_dim {
                return Err(TrainingError::ShapeMismatch(format!(
                    "output gradient has dimension {}, expected {out_dim}",
                    v.len()
                )));
            }
            de_direct = Some(v);
        }
    }

    let mut de: Vec<F> = Vec::new();
    for l in (0..n).rev() {
        let layer = graph.layer(l);
        if layer.is_input {
            continue;
        }
        let dist = layer.dist;
        let d = dist.feature_dim();

        // The dropout indicator multiplies this layer's outgoing
        // contribution, so it multiplies the accumulated dq once.
        if let Some(indicators) = &mask.dropout[l] {
            for (i, v) in dq[l].iter_mut().enumerate() {
                *v = *v * indicators[i / d];
            }
        }

        de.clear();
        if let (true, Some(direct)) = (l == last, &de_direct) {
            de.extend_from_slice(direct);
        } else {
            de.resize(graph.dim(l), F::zero());
            let e_l = state.e(l);
            let q_l = state.q(l);
            let dq_l = &dq[l];
            for (i, flag) in mask.flags[l].iter().enumerate() {
                let span = i * d..(i + 1) * d;
                match flag {
                    NodeFlag::Collapsed => match dist {
                        NodeDistribution::Multilabel { .. } => softmax_backward(
                            &q_l[span.clone()],
                            &dq_l[span.clone()],
                            &mut de[span],
                        ),
                        _ => {
                            de[i] = dq_l[i] * dist.mean_derivative_scalar(e_l[i]);
                        }
                    },
                    NodeFlag::SampledContinuous { z } => {
                        de[i] = dq_l[i] * dist.reparam_derivative_scalar(e_l[i], *z);
                    }
                    NodeFlag::SampledDiscrete => {
                        for v in &mut de[span] {
                            *v = F::zero();
                        }
                    }
                }
            }
        }

        if let Some(bias) = graph.bias_slot_idx(l) {
            if graph.params().is_trainable(bias) {
                for (g, &v) in grads.buffers[bias].iter_mut().zip(de.iter()) {
                    *g = *g + v;
                }
            }
        }

        for &ci in graph.incoming(l) {
            let conn = &graph.connections()[ci];
            let p = conn.parent();
            let w = graph.params().values(conn.weight_slot());
            // Forward used the dropout-scaled view of the parent, so the
            // weight gradient does too.
            let scaled;
            let parent_view: &[F] = match &mask.dropout[p] {
                Some(indicators) => {
                    let dp = graph.layer(p).dist.feature_dim();
                    scaled = crate::inference::scale_by_node(state.q(p), indicators, dp);
                    &scaled
                }
                None => state.q(p),
            };
            let want_w = conn_trainable(graph, conn.weight_slot());
            let want_p = !graph.layer(p).is_input;
            // Split borrows: gradient buffers and dq live in different
            // owners.
            let gw = if want_w {
                Some(&mut grads.buffers[conn.weight_slot()])
            } else {
                None
            };
            let gp = if want_p { Some(&mut dq[p]) } else { None };
            conn.backprop(
                w,
                &de,
                parent_view,
                gw.map(|v| v.as_mut_slice()),
                gp.map(|v| v.as_mut_slice()),
            );
        }
    }
    Ok(())
}

fn conn_trainable<F: Real>(graph: &LayeredChainGraph<F>, slot: SlotId) -> bool {
    graph.params().is_trainable(slot)
}

/// SGD-with-momentum state: per-parameter velocity buffers congruent to the
/// store, starting at zero.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub learning_rate: F,
    pub momentum: F,
    velocity: Vec<Vec<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(learning_rate: F, momentum: F, params: &ParameterStore<F>) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.shapes().iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }
}

/// One update: `v <- momentum * v + g`, `theta <- theta - lr * v`.
/// Non-trainable slots are untouched.
pub fn sgd_step<F: Real>(
    params: &mut ParameterStore<F>,
    grads: &GradientSet<F>,
    opt: &mut OptimizerState<F>,
) {
    assert_eq!(
        params.slot_count(),
        opt.velocity.len(),
        "optimizer state does not match the parameter store"
    );
    for slot in 0..params.slot_count() {
        if !params.is_trainable(slot) {
            continue;
        }
        let g = grads.slot(slot);
        let v = &mut opt.velocity[slot];
        assert_eq!(g.len(), v.len(), "gradient shape mismatch");
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = opt.momentum * *vi + gi;
        }
        let theta = params.values_mut(slot);
        linalg::axpy(-opt.learning_rate, v, theta);
    }
}

/// Stochastic regularization used during training passes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode<F> {
    /// Plain deterministic feed-forward.
    FeedForward,
    /// Training-time dropout; the graph must carry annotations.
    Dropout,
    /// Partially collapsed feed-forward at the given sample rate.
    Pcff { rate: F },
}

/// Training hyperparameters and reproducibility seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig<F> {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of the training data held out for validation, in `[0, 1)`.
    pub val_fraction: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    /// Master seed; shuffling, masks and noise all derive from it.
    pub seed: u64,
    pub mode: TrainMode<F>,
    pub loss: LossSpec,
    pub learning_rate: F,
    pub momentum: F,
}

impl<F: Real> TrainConfig<F> {
    fn check(&self) -> Result<(), TrainingError> {
        if self.batch_size == 0 {
            return Err(TrainingError::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainingError::InvalidConfig(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        if self.patience == 0 {
            return Err(TrainingError::InvalidConfig("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One history row; validation columns are NaN when no validation split
/// exists.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord<F> {
    pub epoch: usize,
    pub train_loss: F,
    pub train_error: F,
    pub val_loss: F,
    pub val_error: F,
}

/// Mean loss and classification error over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics<F> {
    pub mean_loss: F,
    pub error_rate: F,
}

fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn example_target<'a, F: Real>(loss: LossSpec, label: usize) -> Target<'a, F> {
    match loss {
        LossSpec::CrossEntropy => Target::Class(label),
        LossSpec::SquaredError => Target::Class(label),
    }
}

/// Deterministic evaluation: feed-forward in dropout test mode, mean loss,
/// and argmax classification error (ties break toward the lowest index).
pub fn evaluate<F: Real>(
    graph: &LayeredChainGraph<F>,
    dataset: &Dataset<F>,
    loss: LossSpec,
) -> Result<EvalMetrics<F>, TrainingError> {
    loss.check_output(graph)?;
    let last = graph.layer_count() - 1;
    let mut total_loss = F::zero();
    let mut errors = 0usize;
    for ex in &dataset.examples {
        let state = feed_forward(graph, &ex.input, DropoutMode::Test)?;
        let q = state.q(last);
        let e = state.e(last);
        total_loss = total_loss + loss.eval(q, e, &example_target(loss, ex.label))?;
        if argmax(q) != ex.label {
            errors += 1;
        }
    }
    let n = real::<F>(dataset.len().max(1) as f64);
    Ok(EvalMetrics {
        mean_loss: total_loss / n,
        error_rate: real::<F>(errors as f64) / n,
    })
}

/// Trains in place and returns the per-epoch history. Deterministic for a
/// fixed config seed; early stopping restores the parameters with the best
/// validation loss.
pub fn train<F: Real>(
    graph: &mut LayeredChainGraph<F>,
    dataset: &Dataset<F>,
    config: &TrainConfig<F>,
) -> Result<Vec<EpochRecord<F>>, TrainingError> {
    config.check()?;
    config.loss.check_output(graph)?;
    if dataset.is_empty() {
        return Err(TrainingError::EmptyTrainingSplit);
    }
    if matches!(config.mode, TrainMode::Dropout) && !graph.has_dropout() {
        return Err(TrainingError::InvalidConfig(
            "dropout mode needs dropout annotations on the graph".into(),
        ));
    }

    let (train_set, val_set) = crate::data::split(dataset, config.val_fraction, config.seed);
    if train_set.is_empty() {
        return Err(TrainingError::EmptyTrainingSplit);
    }

    let last = graph.layer_count() - 1;
    let mut opt = OptimizerState::new(config.learning_rate, config.momentum, graph.params());
    let mut grads = GradientSet::zeros_like(graph.params());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(F, Vec<Vec<F>>)> = None;
    let mut epochs_since_best = 0usize;
    let mut pass_counter: u64 = 0;
    let nan = F::nan();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = derive_rng(&[config.seed, 0xE90C, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = (u64::from_le_bytes(rand::Rng::gen::<[u8; 8]>(&mut rng)) % (i as u64 + 1))
                as usize;
            order.swap(i, j);
        }

        let mut epoch_loss = F::zero();
        let mut epoch_errors = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &idx in batch {
                let ex = &train_set.examples[idx];
                let noise = PassNoise::new(config.seed, pass_counter);
                pass_counter += 1;
                let (state, mask) = match config.mode {
                    TrainMode::FeedForward => {
                        let state = feed_forward(graph, &ex.input, DropoutMode::Off)?;
                        let mask = StochasticMask::collapsed(graph);
                        (state, mask)
                    }
                    TrainMode::Dropout => dropout_forward_train(graph, &ex.input, &noise)?,
                    TrainMode::Pcff { rate } => {
                        pcff_training_forward(graph, &ex.input, rate, &noise, last)?
                    }
                };
                let q = state.q(last);
                let e = state.e(last);
                let target = example_target(config.loss, ex.label);
                epoch_loss = epoch_loss + config.loss.eval(q, e, &target)?;
                if argmax(q) != ex.label {
                    epoch_errors += 1;
                }
                let grad = config.loss.output_gradient(q, e, &target)?;
                backward_into(graph, &state, &mask, grad, &mut grads)?;
            }
            grads.scale(F::one() / real::<F>(batch.len() as f64));
            sgd_step(graph.params_mut(), &grads, &mut opt);
        }

        let n_train = real::<F>(train_set.len() as f64);
        let (val_loss, val_error) = if val_set.is_empty() {
            (nan, nan)
        } else {
            let metrics = evaluate(graph, &val_set, config.loss)?;
            (metrics.mean_loss, metrics.error_rate)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n_train,
            train_error: real::<F>(epoch_errors as f64) / n_train,
            val_loss,
            val_error,
        });

        if !val_set.is_empty() {
            let improved = match &best {
                None => true,
                Some((best_loss, _)) => val_loss < *best_loss,
            };
            if improved {
                best = Some((val_loss, graph.params().snapshot()));
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if epochs_since_best >= config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, snapshot)) = best {
        graph.params_mut().restore(&snapshot);
    }
    Ok(history)
}
