//! Neural networks as layered chain graphs.
//!
//! A network is modeled as a chain graph over layers of typed random
//! variables: every layer holds nodes of one distribution family
//! ([`distributions::NodeDistribution`]), connections carry pairwise
//! weights, and each node's preactivation is its unary bias plus the
//! weighted sum of its parents' expected features. On this model the crate
//! implements:
//!
//! * deterministic feed-forward as approximate marginal inference
//!   ([`inference::feed_forward`]), with the closed-form activations the
//!   node families induce (sigmoid, tanh, softmax, and rectified-Gaussian
//!   approximations of softplus/ReLU/leaky ReLU);
//! * ancestral sampling and partially collapsed feed-forward
//!   ([`inference::forward_sample`], [`inference::pcff_forward`]), with
//!   reparameterized noise on continuous nodes;
//! * dropout as auxiliary Bernoulli indicators with exact test-time
//!   scaling ([`inference::dropout_forward_train`]);
//! * structural builders for preactivation residual blocks and unrolled
//!   simple/IndRNN recurrences ([`graph::build_refinement`],
//!   [`graph::build_recurrent_unrolled`]);
//! * reverse-mode gradients, SGD with momentum, and full train/evaluate
//!   loops ([`training`]);
//! * an enumeration oracle for exact marginals on small discrete graphs
//!   ([`inference::exact_marginals`]) and a verification suite that checks
//!   every approximation against an independent reference ([`verify`]).
//!
//! All numeric code is generic over the scalar type through
//! [`scalar::Real`] (implemented for `f32` and `f64`); the aliases below
//! pin the common concrete choices.
//!
//! Stochastic passes draw their noise from `(master seed, pass index,
//! node, purpose)`, so every result is reproducible and independent of
//! execution order.

pub mod data;
pub mod distributions;
pub mod graph;
pub mod inference;
pub(crate) mod linalg;
pub mod noise;
pub mod scalar;
pub mod training;
pub mod verify;

pub use distributions::{NodeDistribution, StdPolicy};
pub use graph::{GraphSpec, LayeredChainGraph};
pub use inference::{ActivationState, StochasticMask};
pub use scalar::Real;

/// `f64` graph, the default for experiments and the CLI.
pub type Graph64 = graph::LayeredChainGraph<f64>;
/// `f32` graph.
pub type Graph32 = graph::LayeredChainGraph<f32>;
/// `f64` graph description.
pub type GraphSpec64 = graph::GraphSpec<f64>;
/// `f32` graph description.
pub type GraphSpec32 = graph::GraphSpec<f32>;
/// `f64` dataset.
pub type Dataset64 = data::Dataset<f64>;
/// `f32` dataset.
pub type Dataset32 = data::Dataset<f32>;
