//! Structural builders: refinement modules and recurrent unrolling.
//!
//! Both builders work on graph descriptions, wiring weight sharing through
//! tie groups so that the copies they create stay physically tied to their
//! originals once the graph is built.

use super::{ConnectionSpec, GraphError, GraphSpec, LayerSpec, Pattern};
use crate::scalar::Real;

/// A layered chain subgraph with designated boundaries: the first layer is
/// the input boundary, the last the output boundary.
#[derive(Clone, Debug)]
pub struct Submodule<F> {
    pub layers: Vec<LayerSpec<F>>,
    pub connections: Vec<ConnectionSpec>,
}

impl<F: Real> Submodule<F> {
    /// A single dense connection from `input` to `output`.
    pub fn dense(input: LayerSpec<F>, output: LayerSpec<F>) -> Self {
        let conn = ConnectionSpec::dense(input.id.clone(), output.id.clone());
        Self {
            layers: vec![input, output],
            connections: vec![conn],
        }
    }

    /// A chain of layers with dense connections between consecutive ones.
    pub fn chain(layers: Vec<LayerSpec<F>>) -> Self {
        let connections = layers
            .windows(2)
            .map(|w| ConnectionSpec::dense(w[0].id.clone(), w[1].id.clone()))
            .collect();
        Self {
            layers,
            connections,
        }
    }

    pub fn input(&self) -> &LayerSpec<F> {
        self.layers.first().expect("submodule has layers")
    }

    pub fn output(&self) -> &LayerSpec<F> {
        self.layers.last().expect("submodule has layers")
    }

    /// Turns the fragment into a standalone graph description whose first
    /// layer is the input.
    pub fn into_graph_spec(mut self) -> GraphSpec<F> {
        if let Some(first) = self.layers.first_mut() {
            first.is_input = true;
        }
        GraphSpec::new(self.layers, self.connections)
    }
}

fn same_shape<F: Real>(a: &LayerSpec<F>, b: &LayerSpec<F>) -> bool {
    a.size == b.size && a.dist == b.dist
}

/// Augments `base` (a submodule from `X^{l-1}` to `X^l`) with a refining
/// side branch: a weight-tied copy of `base` feeds a duplicated layer, and
/// `refining` chains from the duplicate back into `X^l`, whose preactivation
/// then sums both branches. During feed-forward the fragment computes the
/// preactivation residual composition `g((id + e_r . g) . e_m)`.
///
/// The duplicated copy renames every non-boundary layer `id` to `id~`; the
/// output layer's unary bias belongs to the module once and is shared with
/// the duplicate, so the refining branch contributes a purely pairwise term.
pub fn build_refinement<F: Real>(
    base: &Submodule<F>,
    refining: &Submodule<F>,
) -> Result<Submodule<F>, GraphError> {
    if base.layers.len() < 2 || refining.layers.len() < 2 {
        return Err(GraphError::FragmentMismatch(
            "base and refining submodules need an input and an output layer".into(),
        ));
    }
    if !same_shape(base.output(), refining.output()) {
        return Err(GraphError::FragmentMismatch(format!(
            "refining output `{}` must match base output `{}` in size and distribution",
            refining.output().id,
            base.output().id
        )));
    }
    if !same_shape(base.output(), refining.input()) {
        return Err(GraphError::FragmentMismatch(format!(
            "refining input `{}` must duplicate base output `{}` in size and distribution",
            refining.input().id,
            base.output().id
        )));
    }

    let in_id = base.input().id.clone();
    let out_id = base.output().id.clone();

    // Copy suffix chosen so copied names cannot collide with existing ones
    // (a nested refinement already contains `~`-suffixed layers).
    let taken: std::collections::HashSet<&str> = base
        .layers
        .iter()
        .chain(refining.layers.iter())
        .map(|l| l.id.as_str())
        .collect();
    let mut suffix = String::from("~");
    while base
        .layers
        .iter()
        .skip(1)
        .any(|l| taken.contains(format!("{}{}", l.id, suffix).as_str()))
    {
        suffix.push('~');
    }

    let dup_id = format!("{out_id}{suffix}");
    let rename = |id: &str| -> String {
        if id == in_id {
            id.to_string()
        } else {
            format!("{id}{suffix}")
        }
    };

    // The original base, with every weight placed in a named tie group so
    // the copy can share it.
    let mut base_layers = base.layers.clone();
    for layer in base_layers.iter_mut().skip(1) {
        if layer.bias_tie.is_none() {
            layer.bias_tie = Some(format!("bias:{}", layer.id));
        }
    }
    let mut base_conns = base.connections.clone();
    for conn in base_conns.iter_mut() {
        if conn.tie_group.is_none() {
            conn.tie_group = Some(format!("tie:{}->{}", conn.parent, conn.child));
        }
    }

    // The tied copy: internals renamed `id~`, output renamed to the
    // duplicate layer, every tie group reused.
    let copy_layers: Vec<LayerSpec<F>> = base_layers
        .iter()
        .skip(1)
        .map(|l| LayerSpec {
            id: rename(&l.id),
            size: l.size,
            dist: l.dist,
            is_input: false,
            bias_tie: l.bias_tie.clone(),
        })
        .collect();
    let copy_conns: Vec<ConnectionSpec> = base_conns
        .iter()
        .map(|c| ConnectionSpec {
            parent: rename(&c.parent),
            child: rename(&c.child),
            pattern: c.pattern.clone(),
            tie_group: c.tie_group.clone(),
            trainable: c.trainable,
        })
        .collect();

    // The refining chain, re-anchored between the duplicate and the output.
    let reanchor = |id: &str| -> String {
        if id == refining.input().id {
            dup_id.clone()
        } else if id == refining.output().id {
            out_id.clone()
        } else {
            id.to_string()
        }
    };
    let refining_internals: Vec<LayerSpec<F>> =
        refining.layers[1..refining.layers.len() - 1].to_vec();
    let refining_conns: Vec<ConnectionSpec> = refining
        .connections
        .iter()
        .map(|c| ConnectionSpec {
            parent: reanchor(&c.parent),
            child: reanchor(&c.child),
            pattern: c.pattern.clone(),
            tie_group: c.tie_group.clone(),
            trainable: c.trainable,
        })
        .collect();

    // Layer order: input, base internals, copied internals, duplicate,
    // refining internals, output.
    let mut layers = Vec::new();
    layers.push(base_layers[0].clone());
    layers.extend(base_layers[1..base_layers.len() - 1].iter().cloned());
    layers.extend(copy_layers);
    layers.extend(refining_internals);
    layers.push(base_layers[base_layers.len() - 1].clone());

    let mut seen = std::collections::HashSet::new();
    for l in &layers {
        if !seen.insert(l.id.clone()) {
            return Err(GraphError::FragmentMismatch(format!(
                "layer id `{}` collides inside the refinement module",
                l.id
            )));
        }
    }

    let mut connections = base_conns;
    connections.extend(copy_conns);
    connections.extend(refining_conns);

    Ok(Submodule {
        layers,
        connections,
    })
}

/// Recurrence variant for unrolled graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentMode {
    /// Dense recurrent connection (simple / Elman recurrent layer).
    Simple,
    /// Diagonal recurrent connection, keeping the nodes of the layer
    /// conditionally independent through time (IndRNN).
    IndRnn,
}

/// Name of one layer's copy at time step `t`.
pub fn step_id(base: &str, t: usize) -> String {
    format!("{base}@{t}")
}

/// Unrolls `base` over `steps` time steps: every layer and connection is
/// copied per step with all parameters tied across time, and each layer in
/// `recurrent` receives an extra connection from its previous-step copy
/// (dense for [`RecurrentMode::Simple`], diagonal for
/// [`RecurrentMode::IndRnn`]), also tied across time.
pub fn build_recurrent_unrolled<F: Real>(
    base: &GraphSpec<F>,
    recurrent: &[&str],
    steps: usize,
    mode: RecurrentMode,
) -> Result<GraphSpec<F>, GraphError> {
    if steps == 0 {
        return Err(GraphError::Unsupported(
            "recurrent unrolling needs at least one step".into(),
        ));
    }
    for id in recurrent {
        match base.layers.iter().find(|l| l.id == *id) {
            None => return Err(GraphError::UnknownLayer(id.to_string())),
            Some(l) if l.is_input => {
                return Err(GraphError::FragmentMismatch(format!(
                    "recurrent layer `{id}` cannot be an input layer"
                )))
            }
            Some(_) => {}
        }
    }

    let mut layers = Vec::with_capacity(base.layers.len() * steps);
    let mut connections = Vec::new();
    let mut dropout = Vec::new();
    for t in 0..steps {
        for layer in &base.layers {
            let bias_tie = if layer.is_input {
                None
            } else {
                Some(
                    layer
                        .bias_tie
                        .clone()
                        .unwrap_or_else(|| format!("bias:{}", layer.id)),
                )
            };
            layers.push(LayerSpec {
                id: step_id(&layer.id, t),
                size: layer.size,
                dist: layer.dist,
                is_input: layer.is_input,
                bias_tie,
            });
        }
        for conn in &base.connections {
            connections.push(ConnectionSpec {
                parent: step_id(&conn.parent, t),
                child: step_id(&conn.child, t),
                pattern: conn.pattern.clone(),
                tie_group: Some(
                    conn.tie_group
                        .clone()
                        .unwrap_or_else(|| format!("tie:{}->{}", conn.parent, conn.child)),
                ),
                trainable: conn.trainable,
            });
        }
        if t > 0 {
            for id in recurrent {
                connections.push(ConnectionSpec {
                    parent: step_id(id, t - 1),
                    child: step_id(id, t),
                    pattern: match mode {
                        RecurrentMode::Simple => Pattern::Dense,
                        RecurrentMode::IndRnn => Pattern::Diagonal,
                    },
                    tie_group: Some(format!("rec:{id}")),
                    trainable: true,
                });
            }
        }
        for d in &base.dropout {
            dropout.push(super::DropoutSpec {
                layer: step_id(&d.layer, t),
                keep_prob: d.keep_prob,
            });
        }
    }

    // Layers are emitted step-major and each recurrent edge points from
    // step t-1 to step t, so the topological order is preserved.
    let mut spec = GraphSpec::new(layers, connections);
    spec.dropout = dropout;
    Ok(spec)
}
