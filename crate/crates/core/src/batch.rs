//! Sorted microbatch planning.
//!
//! Under variable-length attention, a sequence packed from many short
//! documents processes faster than one spanning a single long document, so
//! a gradient-accumulation step finishes sooner when its costly
//! microbatches run first. The planner sorts a step's sequences by an
//! attention-cost key and chunks them into microbatches in descending
//! order.
//!
//! Two keys are available. `sum_len` is the sum of document lengths in the
//! sequence — degenerate under full packing, where every sequence sums to
//! L, but kept selectable. `sum_len_sq` (the default) sums squared
//! document lengths, a proxy for quadratic attention cost that actually
//! separates a one-document sequence from a many-document one. Pad
//! segments count toward neither key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pack::SequenceIndexEntry;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("microbatch_size must be >= 1")]
    BadMicrobatchSize,
    #[error("cost key overflow on sequence {0}")]
    CostOverflow(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    SumLen,
    #[default]
    SumLenSq,
}

impl std::str::FromStr for KeyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum_len" => Ok(KeyKind::SumLen),
            "sum_len_sq" => Ok(KeyKind::SumLenSq),
            other => Err(format!("unknown key kind {other:?} (expected sum_len or sum_len_sq)")),
        }
    }
}

/// Cost metadata for one sequence: its id within the step and its non-pad
/// segment lengths.
#[derive(Debug, Clone)]
pub struct SequenceCostInput {
    pub sequence_id: u64,
    pub segment_lengths: Vec<u64>,
}

impl SequenceCostInput {
    pub fn from_index_entry(sequence_id: u64, entry: &SequenceIndexEntry) -> SequenceCostInput {
        SequenceCostInput {
            sequence_id,
            segment_lengths: entry
                .segments
                .iter()
                .filter(|s| !s.is_pad())
                .map(|s| s.length)
                .collect(),
        }
    }

    fn cost(&self, key: KeyKind) -> Result<u64, BatchError> {
        let mut total: u64 = 0;
        for &len in &self.segment_lengths {
            let term = match key {
                KeyKind::SumLen => len,
                KeyKind::SumLenSq => {
                    len.checked_mul(len).ok_or(BatchError::CostOverflow(self.sequence_id))?
                }
            };
            total = total.checked_add(term).ok_or(BatchError::CostOverflow(self.sequence_id))?;
        }
        Ok(total)
    }
}

/// One step's microbatch schedule. Microbatches partition the step's
/// sequences; `cost_keys` are non-increasing across the list. `None` slots
/// pad the final microbatch when the step size is not divisible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicrobatchPlan {
    pub step_id: u64,
    pub key_kind: KeyKind,
    pub microbatches: Vec<Vec<Option<u64>>>,
    pub cost_keys: Vec<u64>,
    pub padded_slots: u64,
}

/// Plans one step: sequences sorted by cost descending (ties by sequence
/// id ascending) and chunked into consecutive microbatches of
/// `microbatch_size` slots.
pub fn plan_microbatches(
    step_id: u64,
    sequences: &[SequenceCostInput],
    microbatch_size: usize,
    key_kind: KeyKind,
) -> Result<MicrobatchPlan, BatchError> {
    if microbatch_size < 1 {
        return Err(BatchError::BadMicrobatchSize);
    }

    let mut costed: Vec<(u64, u64)> = sequences
        .iter()
        .map(|s| Ok((s.cost(key_kind)?, s.sequence_id)))
        .collect::<Result<_, BatchError>>()?;
    costed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut microbatches = Vec::new();
    let mut cost_keys = Vec::new();
    let mut padded_slots = 0u64;
    for chunk in costed.chunks(microbatch_size) {
        let mut slots: Vec<Option<u64>> = chunk.iter().map(|&(_, id)| Some(id)).collect();
        while slots.len() < microbatch_size {
            slots.push(None);
            padded_slots += 1;
        }
        cost_keys.push(chunk.iter().map(|&(c, _)| c).sum());
        microbatches.push(slots);
    }

    Ok(MicrobatchPlan { step_id, key_kind, microbatches, cost_keys, padded_slots })
}
