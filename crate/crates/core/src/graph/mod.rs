//! The layered chain graph data model.
//!
//! A graph is described by a serializable [`GraphSpec`]: layers in
//! topological order, connections between them, and optional dropout
//! annotations. [`LayeredChainGraph::build`] validates a spec and allocates
//! parameter storage (pairwise weights per connection, one unary bias vector
//! per non-input layer). Tie groups map several connections or biases onto
//! one storage slot.
//!
//! Weights are stored per connection as row-major matrices over flattened
//! feature coordinates: a dense connection from a parent layer with `N_p`
//! nodes of feature dimension `d_p` into a child with `N_c` nodes of
//! dimension `d_c` owns an `(N_c * d_c) x (N_p * d_p)` matrix, i.e. one
//! `d_c x d_p` block per node pair. Diagonal connections store only the
//! blocks with equal node index.

mod build;
mod params;

pub use build::{build_recurrent_unrolled, build_refinement, RecurrentMode, Submodule};
pub use params::{ParamSlot, ParameterStore, SlotId};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::NodeDistribution;
use crate::linalg;
use crate::noise::derive_rng;
use crate::scalar::{real, Real};

/// One layer of identically distributed random-variable nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSpec<F> {
    pub id: String,
    pub size: usize,
    pub dist: NodeDistribution<F>,
    #[serde(default, rename = "input")]
    pub is_input: bool,
    /// Layers sharing a bias tie group share one bias vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_tie: Option<String>,
}

impl<F: Real> LayerSpec<F> {
    pub fn input(id: impl Into<String>, size: usize, dist: NodeDistribution<F>) -> Self {
        Self {
            id: id.into(),
            size,
            dist,
            is_input: true,
            bias_tie: None,
        }
    }

    pub fn hidden(id: impl Into<String>, size: usize, dist: NodeDistribution<F>) -> Self {
        Self {
            id: id.into(),
            size,
            dist,
            is_input: false,
            bias_tie: None,
        }
    }

    /// Total feature dimension of the layer (`size * feature_dim`).
    pub fn dim(&self) -> usize {
        self.size * self.dist.feature_dim()
    }
}

/// Connectivity pattern of a parent-child connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Every parent node connects to every child node.
    Dense,
    /// Node `i` of the parent connects only to node `i` of the child;
    /// requires equal layer sizes.
    Diagonal,
    /// Explicit node-pair mask, `keep[parent_node][child_node]`.
    Masked { keep: Vec<Vec<bool>> },
}

/// A pairwise connection between two layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectionSpec {
    pub parent: String,
    pub child: String,
    #[serde(default = "Pattern::dense")]
    pub pattern: Pattern,
    /// Connections sharing a tie group share one weight tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_group: Option<String>,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

impl Pattern {
    fn dense() -> Self {
        Pattern::Dense
    }
}

fn default_true() -> bool {
    true
}

impl ConnectionSpec {
    pub fn dense(parent: impl Into<String>, child: impl Into<String>) -> Self {
        Self {
            parent: parent.into(),
            child: child.into(),
            pattern: Pattern::Dense,
            tie_group: None,
            trainable: true,
        }
    }

    pub fn diagonal(parent: impl Into<String>, child: impl Into<String>) -> Self {
        Self {
            pattern: Pattern::Diagonal,
            ..Self::dense(parent, child)
        }
    }

    pub fn tied(mut self, group: impl Into<String>) -> Self {
        self.tie_group = Some(group.into());
        self
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }
}

/// Dropout annotation: keep probability for every node of one layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DropoutSpec<F> {
    pub layer: String,
    pub keep_prob: F,
}

/// Serializable description of a layered chain graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSpec<F> {
    pub layers: Vec<LayerSpec<F>>,
    #[serde(default = "Vec::new")]
    pub connections: Vec<ConnectionSpec>,
    #[serde(default = "Vec::new", skip_serializing_if = "Vec::is_empty")]
    pub dropout: Vec<DropoutSpec<F>>,
}

impl<F: Real> GraphSpec<F> {
    pub fn new(layers: Vec<LayerSpec<F>>, connections: Vec<ConnectionSpec>) -> Self {
        Self {
            layers,
            connections,
            dropout: Vec::new(),
        }
    }

    /// A sequential graph: the first layer is the input and consecutive
    /// layers are densely connected.
    pub fn sequential(mut layers: Vec<LayerSpec<F>>) -> Self {
        if let Some(first) = layers.first_mut() {
            first.is_input = true;
        }
        let connections = layers
            .windows(2)
            .map(|w| ConnectionSpec::dense(w[0].id.clone(), w[1].id.clone()))
            .collect();
        Self::new(layers, connections)
    }
}

/// A structural defect found by [`validate`].
#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("duplicate layer id `{0}`")]
    DuplicateLayer(String),
    #[error("layer `{0}` has size 0")]
    EmptyLayer(String),
    #[error("layer `{layer}` has an invalid distribution: {reason}")]
    BadDistribution { layer: String, reason: String },
    #[error("connection references unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("input layer `{0}` has parent connections")]
    InputWithParents(String),
    #[error("non-input layer `{0}` has no parent connections")]
    MissingParents(String),
    #[error("connection `{parent}` -> `{child}` goes against the topological order")]
    OrderViolation { parent: String, child: String },
    #[error("diagonal connection `{parent}` ({parent_size}) -> `{child}` ({child_size}) needs equal sizes")]
    DiagonalSizeMismatch {
        parent: String,
        child: String,
        parent_size: usize,
        child_size: usize,
    },
    #[error("mask of `{parent}` -> `{child}` has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    MaskShapeMismatch {
        parent: String,
        child: String,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("tie group `{group}` mixes incompatible members: {reason}")]
    TieMismatch { group: String, reason: String },
    #[error("dropout annotation references unknown layer `{0}`")]
    DropoutUnknownLayer(String),
    #[error("dropout keep probability on `{0}` must lie in (0, 1]")]
    DropoutProbOutOfRange(String),
    #[error("dropout cannot target output layer `{0}`")]
    DropoutOnOutputLayer(String),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("missing activation for parent layer `{0}`")]
    MissingParent(String),
    #[error("layer `{layer}` expects dimension {expected}, got {got}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("submodule boundaries do not match: {0}")]
    FragmentMismatch(String),
    #[error("{0}")]
    Unsupported(String),
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every structural invariant of a graph description. Returns all
/// violations found rather than stopping at the first.
pub fn validate<F: Real>(spec: &GraphSpec<F>) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if index.insert(layer.id.as_str(), i).is_some() {
            violations.push(Violation::DuplicateLayer(layer.id.clone()));
        }
        if layer.size == 0 {
            violations.push(Violation::EmptyLayer(layer.id.clone()));
        }
        if let Err(e) = layer.dist.validate() {
            violations.push(Violation::BadDistribution {
                layer: layer.id.clone(),
                reason: e.to_string(),
            });
        }
    }

    let mut has_parent = vec![false; spec.layers.len()];
    let mut has_child = vec![false; spec.layers.len()];
    let mut tie_shapes: HashMap<&str, (usize, Pattern, bool)> = HashMap::new();
    for conn in &spec.connections {
        let (p, c) = match (index.get(conn.parent.as_str()), index.get(conn.child.as_str())) {
            (Some(&p), Some(&c)) => (p, c),
            (p, c) => {
                if p.is_none() {
                    violations.push(Violation::UnknownLayer(conn.parent.clone()));
                }
                if c.is_none() {
                    violations.push(Violation::UnknownLayer(conn.child.clone()));
                }
                continue;
            }
        };
        if p >= c {
            violations.push(Violation::OrderViolation {
                parent: conn.parent.clone(),
                child: conn.child.clone(),
            });
            continue;
        }
        has_parent[c] = true;
        has_child[p] = true;
        let parent = &spec.layers[p];
        let child = &spec.layers[c];
        match &conn.pattern {
            Pattern::Dense => {}
            Pattern::Diagonal => {
                if parent.size != child.size {
                    violations.push(Violation::DiagonalSizeMismatch {
                        parent: conn.parent.clone(),
                        child: conn.child.clone(),
                        parent_size: parent.size,
                        child_size: child.size,
                    });
                }
            }
            Pattern::Masked { keep } => {
                let rows = keep.len();
                let cols = keep.first().map_or(0, |r| r.len());
                let ragged = keep.iter().any(|r| r.len() != cols);
                if rows != parent.size || cols != child.size || ragged {
                    violations.push(Violation::MaskShapeMismatch {
                        parent: conn.parent.clone(),
                        child: conn.child.clone(),
                        rows: parent.size,
                        cols: child.size,
                        got_rows: rows,
                        got_cols: cols,
                    });
                }
            }
        }
        if let Some(group) = &conn.tie_group {
            let len = weight_len(parent, child, &conn.pattern);
            match tie_shapes.get(group.as_str()) {
                None => {
                    tie_shapes.insert(group, (len, conn.pattern.clone(), conn.trainable));
                }
                Some((l, pat, tr)) => {
                    if *l != len || *pat != conn.pattern {
                        violations.push(Violation::TieMismatch {
                            group: group.clone(),
                            reason: "members have different shapes".into(),
                        });
                    } else if *tr != conn.trainable {
                        violations.push(Violation::TieMismatch {
                            group: group.clone(),
                            reason: "members disagree on trainability".into(),
                        });
                    }
                }
            }
        }
    }

    let mut bias_ties: HashMap<&str, usize> = HashMap::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.is_input && has_parent[i] {
            violations.push(Violation::InputWithParents(layer.id.clone()));
        }
        if !layer.is_input && !has_parent[i] {
            violations.push(Violation::MissingParents(layer.id.clone()));
        }
        if let Some(group) = &layer.bias_tie {
            let dim = layer.dim();
            match bias_ties.get(group.as_str()) {
                None => {
                    bias_ties.insert(group, dim);
                }
                Some(&d) if d != dim => violations.push(Violation::TieMismatch {
                    group: group.clone(),
                    reason: "bias members have different dimensions".into(),
                }),
                _ => {}
            }
        }
    }

    for d in &spec.dropout {
        match index.get(d.layer.as_str()) {
            None => violations.push(Violation::DropoutUnknownLayer(d.layer.clone())),
            Some(&i) => {
                let keep = d.keep_prob.to_f64().unwrap_or(f64::NAN);
                if !(keep > 0.0 && keep <= 1.0) {
                    violations.push(Violation::DropoutProbOutOfRange(d.layer.clone()));
                }
                if !has_child[i] {
                    violations.push(Violation::DropoutOnOutputLayer(d.layer.clone()));
                }
            }
        }
    }

    violations
}

fn weight_len<F: Real>(parent: &LayerSpec<F>, child: &LayerSpec<F>, pattern: &Pattern) -> usize {
    let block = parent.dist.feature_dim() * child.dist.feature_dim();
    match pattern {
        Pattern::Dense | Pattern::Masked { .. } => parent.size * child.size * block,
        Pattern::Diagonal => parent.size.min(child.size) * block,
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum InitScheme<F> {
    /// All weights zero.
    Zeros,
    /// Weights i.i.d. `N(0, 1/fan_in)`; the default. Fan-in is the total
    /// feature dimension feeding each node of the child layer.
    FanIn,
    /// Weights i.i.d. `N(0, std^2)` with an explicit scale.
    Normal { std: F },
}

/// A resolved connection inside a built graph.
#[derive(Clone, Debug)]
pub struct Connection {
    pub(crate) parent: usize,
    pub(crate) child: usize,
    pub(crate) weight_slot: SlotId,
    pub(crate) n_parent: usize,
    pub(crate) d_parent: usize,
    pub(crate) n_child: usize,
    pub(crate) d_child: usize,
    pub(crate) kind: ConnKind,
}

#[derive(Clone, Debug)]
pub(crate) enum ConnKind {
    Dense,
    Diagonal,
    /// Flat mask, `keep[parent_node * n_child + child_node]`.
    Masked(Vec<bool>),
}

impl Connection {
    pub fn parent(&self) -> usize {
        self.parent
    }

    pub fn child(&self) -> usize {
        self.child
    }

    pub fn weight_slot(&self) -> SlotId {
        self.weight_slot
    }

    /// `out += W * parent_act` with the connection's pattern semantics.
    pub(crate) fn apply<F: Real>(&self, w: &[F], parent_act: &[F], out: &mut [F]) {
        let (dp, dc) = (self.d_parent, self.d_child);
        match &self.kind {
            ConnKind::Dense => linalg::matvec_add(w, parent_act, out),
            ConnKind::Diagonal => {
                let block = dc * dp;
                for i in 0..self.n_child.min(self.n_parent) {
                    let wb = &w[i * block..(i + 1) * block];
                    let q = &parent_act[i * dp..(i + 1) * dp];
                    let o = &mut out[i * dc..(i + 1) * dc];
                    linalg::matvec_add(wb, q, o);
                }
            }
            ConnKind::Masked(keep) => {
                let in_dim = self.n_parent * dp;
                for j in 0..self.n_parent {
                    for i in 0..self.n_child {
                        if !keep[j * self.n_child + i] {
                            continue;
                        }
                        for a in 0..dc {
                            let row = &w[(i * dc + a) * in_dim + j * dp..][..dp];
                            out[i * dc + a] =
                                out[i * dc + a] + linalg::dot(row, &parent_act[j * dp..][..dp]);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `grad_w += delta_child * parent_act^T` and, when given,
    /// `grad_parent += W^T * delta_child`, honoring the pattern.
    pub(crate) fn backprop<F: Real>(
        &self,
        w: &[F],
        delta_child: &[F],
        parent_act: &[F],
        grad_w: Option<&mut [F]>,
        grad_parent: Option<&mut [F]>,
    ) {
        let (dp, dc) = (self.d_parent, self.d_child);
        match &self.kind {
            ConnKind::Dense => {
                if let Some(gw) = grad_w {
                    linalg::outer_add(delta_child, parent_act, gw);
                }
                if let Some(gp) = grad_parent {
                    linalg::matvec_transpose_add(w, delta_child, gp);
                }
            }
            ConnKind::Diagonal => {
                let block = dc * dp;
                let n = self.n_child.min(self.n_parent);
                if let Some(gw) = grad_w {
                    for i in 0..n {
                        linalg::outer_add(
                            &delta_child[i * dc..(i + 1) * dc],
                            &parent_act[i * dp..(i + 1) * dp],
                            &mut gw[i * block..(i + 1) * block],
                        );
                    }
                }
                if let Some(gp) = grad_parent {
                    for i in 0..n {
                        linalg::matvec_transpose_add(
                            &w[i * block..(i + 1) * block],
                            &delta_child[i * dc..(i + 1) * dc],
                            &mut gp[i * dp..(i + 1) * dp],
                        );
                    }
                }
            }
            ConnKind::Masked(keep) => {
                let in_dim = self.n_parent * dp;
                if let Some(gw) = grad_w {
                    for j in 0..self.n_parent {
                        for i in 0..self.n_child {
                            if !keep[j * self.n_child + i] {
                                continue;
                            }
                            for a in 0..dc {
                                let row = &mut gw[(i * dc + a) * in_dim + j * dp..][..dp];
                                linalg::axpy(delta_child[i * dc + a], &parent_act[j * dp..][..dp], row);
                            }
                        }
                    }
                }
                if let Some(gp) = grad_parent {
                    for j in 0..self.n_parent {
                        for i in 0..self.n_child {
                            if !keep[j * self.n_child + i] {
                                continue;
                            }
                            for a in 0..dc {
                                let row = &w[(i * dc + a) * in_dim + j * dp..][..dp];
                                linalg::axpy(delta_child[i * dc + a], row, &mut gp[j * dp..][..dp]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A validated layered chain graph with allocated parameters.
#[derive(Clone, Debug)]
pub struct LayeredChainGraph<F> {
    spec: GraphSpec<F>,
    index: HashMap<String, usize>,
    dims: Vec<usize>,
    bias_slots: Vec<Option<SlotId>>,
    connections: Vec<Connection>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    dropout_keep: Vec<Option<F>>,
    params: ParameterStore<F>,
}

impl<F: Real> LayeredChainGraph<F> {
    /// Validates the description and allocates zeroed parameter storage.
    pub fn build(spec: GraphSpec<F>) -> Result<Self, GraphError> {
        let violations = validate(&spec);
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }

        let index: HashMap<String, usize> = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let dims: Vec<usize> = spec.layers.iter().map(|l| l.dim()).collect();

        // Per-layer fan-in drives the default init scale.
        let mut fan_in = vec![0usize; spec.layers.len()];
        for conn in &spec.connections {
            let p = index[&conn.parent];
            let c = index[&conn.child];
            fan_in[c] += match conn.pattern {
                Pattern::Diagonal => spec.layers[p].dist.feature_dim(),
                _ => dims[p],
            };
        }

        let mut params = ParameterStore::new();
        let mut weight_ties: HashMap<String, SlotId> = HashMap::new();
        let mut connections = Vec::with_capacity(spec.connections.len());
        let mut incoming = vec![Vec::new(); spec.layers.len()];
        let mut outgoing = vec![Vec::new(); spec.layers.len()];
        for conn in &spec.connections {
            let p = index[&conn.parent];
            let c = index[&conn.child];
            let parent = &spec.layers[p];
            let child = &spec.layers[c];
            let len = weight_len(parent, child, &conn.pattern);
            let slot = match &conn.tie_group {
                Some(group) => *weight_ties
                    .entry(group.clone())
                    .or_insert_with(|| params.add_slot(len, conn.trainable, fan_in[c])),
                None => params.add_slot(len, conn.trainable, fan_in[c]),
            };
            let kind = match &conn.pattern {
                Pattern::Dense => ConnKind::Dense,
                Pattern::Diagonal => ConnKind::Diagonal,
                Pattern::Masked { keep } => {
                    let mut flat = Vec::with_capacity(parent.size * child.size);
                    for row in keep {
                        flat.extend_from_slice(row);
                    }
                    ConnKind::Masked(flat)
                }
            };
            let idx = connections.len();
            connections.push(Connection {
                parent: p,
                child: c,
                weight_slot: slot,
                n_parent: parent.size,
                d_parent: parent.dist.feature_dim(),
                n_child: child.size,
                d_child: child.dist.feature_dim(),
                kind,
            });
            incoming[c].push(idx);
            outgoing[p].push(idx);
        }

        let mut bias_ties: HashMap<String, SlotId> = HashMap::new();
        let mut bias_slots = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            if layer.is_input {
                bias_slots.push(None);
                continue;
            }
            let slot = match &layer.bias_tie {
                Some(group) => *bias_ties
                    .entry(group.clone())
                    .or_insert_with(|| params.add_slot(dims[i], true, fan_in[i])),
                None => params.add_slot(dims[i], true, fan_in[i]),
            };
            bias_slots.push(Some(slot));
        }

        let mut dropout_keep = vec![None; spec.layers.len()];
        for d in &spec.dropout {
            dropout_keep[index[&d.layer]] = Some(d.keep_prob);
        }

        Ok(Self {
            spec,
            index,
            dims,
            bias_slots,
            connections,
            incoming,
            outgoing,
            dropout_keep,
            params,
        })
    }

    pub fn spec(&self) -> &GraphSpec<F> {
        &self.spec
    }

    pub fn layer_count(&self) -> usize {
        self.spec.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerSpec<F> {
        &self.spec.layers[i]
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Total feature dimension of layer `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    pub fn input_layers(&self) -> Vec<usize> {
        (0..self.layer_count())
            .filter(|&i| self.spec.layers[i].is_input)
            .collect()
    }

    /// Layers with no outgoing connections.
    pub fn output_layers(&self) -> Vec<usize> {
        (0..self.layer_count())
            .filter(|&i| self.outgoing[i].is_empty())
            .collect()
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub(crate) fn incoming(&self, layer: usize) -> &[usize] {
        &self.incoming[layer]
    }

    pub fn dropout_keep(&self, layer: usize) -> Option<F> {
        self.dropout_keep[layer]
    }

    pub fn has_dropout(&self) -> bool {
        self.dropout_keep.iter().any(|d| d.is_some())
    }

    pub fn params(&self) -> &ParameterStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.params
    }

    pub fn bias_slot(&self, layer: &str) -> Option<SlotId> {
        self.index
            .get(layer)
            .and_then(|&i| self.bias_slots[i])
    }

    pub(crate) fn bias_slot_idx(&self, layer: usize) -> Option<SlotId> {
        self.bias_slots[layer]
    }

    /// Weight slot of the first connection from `parent` to `child`.
    pub fn weight_slot_between(&self, parent: &str, child: &str) -> Option<SlotId> {
        let p = *self.index.get(parent)?;
        let c = *self.index.get(child)?;
        self.connections
            .iter()
            .find(|conn| conn.parent == p && conn.child == c)
            .map(|conn| conn.weight_slot)
    }

    /// Marks the listed layers with a dropout keep probability. Targets must
    /// exist, must not be output layers, and `keep` must lie in `(0, 1]`.
    pub fn augment_dropout(&mut self, layers: &[&str], keep: F) -> Result<(), GraphError> {
        let keep_f = keep.to_f64().unwrap_or(f64::NAN);
        if !(keep_f > 0.0 && keep_f <= 1.0) {
            return Err(GraphError::Invalid(vec![Violation::DropoutProbOutOfRange(
                layers.first().unwrap_or(&"?").to_string(),
            )]));
        }
        let mut indices = Vec::with_capacity(layers.len());
        for id in layers {
            let i = self
                .layer_index(id)
                .ok_or_else(|| GraphError::UnknownLayer(id.to_string()))?;
            if self.outgoing[i].is_empty() {
                return Err(GraphError::Invalid(vec![Violation::DropoutOnOutputLayer(
                    id.to_string(),
                )]));
            }
            indices.push(i);
        }
        for (&i, id) in indices.iter().zip(layers) {
            self.dropout_keep[i] = Some(keep);
            self.spec.dropout.retain(|d| d.layer != *id);
            self.spec.dropout.push(DropoutSpec {
                layer: id.to_string(),
                keep_prob: keep,
            });
        }
        Ok(())
    }

    /// Removes all dropout annotations.
    pub fn clear_dropout(&mut self) {
        for d in self.dropout_keep.iter_mut() {
            *d = None;
        }
        self.spec.dropout.clear();
    }

    /// Initializes all parameters: biases to zero, weights per `scheme`.
    /// Deterministic for a given seed; tied groups are initialized once.
    pub fn init_params(&mut self, scheme: InitScheme<F>, seed: u64) {
        let weight_slots: Vec<SlotId> = {
            let mut seen = vec![false; self.params.slot_count()];
            let mut out = Vec::new();
            for conn in &self.connections {
                if !seen[conn.weight_slot] {
                    seen[conn.weight_slot] = true;
                    out.push(conn.weight_slot);
                }
            }
            out
        };
        for slot in 0..self.params.slot_count() {
            for v in self.params.values_mut(slot) {
                *v = F::zero();
            }
        }
        let std_of = |fan_in: usize| -> Option<F> {
            match scheme {
                InitScheme::Zeros => None,
                InitScheme::FanIn => Some(real::<F>(1.0 / (fan_in.max(1) as f64).sqrt())),
                InitScheme::Normal { std } => Some(std),
            }
        };
        for slot in weight_slots {
            let Some(std) = std_of(self.params.fan_in(slot)) else {
                continue;
            };
            let mut rng = derive_rng(&[seed, slot as u64]);
            for v in self.params.values_mut(slot) {
                *v = std * F::std_normal(&mut rng);
            }
        }
        // Masked entries stay zero no matter the scheme.
        for conn in &self.connections {
            if let ConnKind::Masked(keep) = &conn.kind {
                let (dp, dc) = (conn.d_parent, conn.d_child);
                let in_dim = conn.n_parent * dp;
                let w = self.params.values_mut(conn.weight_slot);
                for j in 0..conn.n_parent {
                    for i in 0..conn.n_child {
                        if keep[j * conn.n_child + i] {
                            continue;
                        }
                        for a in 0..dc {
                            for b in 0..dp {
                                w[(i * dc + a) * in_dim + j * dp + b] = F::zero();
                            }
                        }
                    }
                }
            }
        }
    }

    /// Preactivation of one layer from explicitly supplied parent
    /// activations: `e = b + sum over connections of W * q_parent`.
    pub fn preactivation(
        &self,
        layer: &str,
        parent_activations: &HashMap<String, Vec<F>>,
    ) -> Result<Vec<F>, GraphError> {
        let l = self
            .layer_index(layer)
            .ok_or_else(|| GraphError::UnknownLayer(layer.to_string()))?;
        let mut acts: Vec<Vec<F>> = vec![Vec::new(); self.layer_count()];
        for &ci in &self.incoming[l] {
            let conn = &self.connections[ci];
            let pid = &self.spec.layers[conn.parent].id;
            let q = parent_activations
                .get(pid)
                .ok_or_else(|| GraphError::MissingParent(pid.clone()))?;
            if q.len() != self.dims[conn.parent] {
                return Err(GraphError::DimensionMismatch {
                    layer: pid.clone(),
                    expected: self.dims[conn.parent],
                    got: q.len(),
                });
            }
            acts[conn.parent] = q.clone();
        }
        let mut out = Vec::new();
        self.preactivation_into(l, &acts, &mut out);
        Ok(out)
    }

    /// Engine path: `out = b + sum W * acts[parent]`, trusting dimensions.
    pub(crate) fn preactivation_into(&self, l: usize, acts: &[Vec<F>], out: &mut Vec<F>) {
        out.clear();
        match self.bias_slots[l] {
            Some(slot) => out.extend_from_slice(self.params.values(slot)),
            None => out.resize(self.dims[l], F::zero()),
        }
        for &ci in &self.incoming[l] {
            let conn = &self.connections[ci];
            conn.apply(
                self.params.values(conn.weight_slot),
                &acts[conn.parent],
                out,
            );
        }
    }
}
