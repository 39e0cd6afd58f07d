//! Parameter storage with weight tying.
//!
//! All trainable tensors live in flat slots. Tied connections (and tied
//! biases) reference the same slot, so sharing is physical: writing through
//! one member is immediately visible through every other member, and
//! gradients for a tie group accumulate into a single buffer.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Index of one storage slot inside a [`ParameterStore`].
pub type SlotId = usize;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSlot<F> {
    pub(crate) values: Vec<F>,
    pub(crate) trainable: bool,
    /// Fan-in used by the default initialization scheme.
    pub(crate) fan_in: usize,
}

/// The flat parameter tensors of one graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParameterStore<F> {
    slots: Vec<ParamSlot<F>>,
}

impl<F: Real> ParameterStore<F> {
    pub(crate) fn new() -> Self {
        Self { slots: Vec::new() }
    }

    pub(crate) fn add_slot(&mut self, len: usize, trainable: bool, fan_in: usize) -> SlotId {
        self.slots.push(ParamSlot {
            values: vec![F::zero(); len],
            trainable,
            fan_in,
        });
        self.slots.len() - 1
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Total number of stored scalars; tied groups count once.
    pub fn total_len(&self) -> usize {
        self.slots.iter().map(|s| s.values.len()).sum()
    }

    pub fn values(&self, id: SlotId) -> &[F] {
        &self.slots[id].values
    }

    pub fn values_mut(&mut self, id: SlotId) -> &mut [F] {
        &mut self.slots[id].values
    }

    pub fn is_trainable(&self, id: SlotId) -> bool {
        self.slots[id].trainable
    }

    pub(crate) fn fan_in(&self, id: SlotId) -> usize {
        self.slots[id].fan_in
    }

    /// Copies all slot values (used to restore the best parameters after
    /// early stopping).
    pub fn snapshot(&self) -> Vec<Vec<F>> {
        self.slots.iter().map(|s| s.values.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<F>]) {
        assert_eq!(snapshot.len(), self.slots.len(), "snapshot shape mismatch");
        for (slot, saved) in self.slots.iter_mut().zip(snapshot) {
            assert_eq!(slot.values.len(), saved.len(), "snapshot shape mismatch");
            slot.values.copy_from_slice(saved);
        }
    }

    /// Slot lengths, for building congruent gradient/velocity buffers.
    pub fn shapes(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.values.len()).collect()
    }
}
