//! Dense attention-mask materialization, for tests and audits.
//!
//! Trainers consume the streaming group-boundary export
//! ([`PackedSequence::group_ends`]); a dense L×L matrix is only tractable
//! at test scale, so it is gated behind a ceiling.

use super::{PackError, PackedSequence, SegmentRole};

pub const DEFAULT_MASK_CEILING: usize = 1024;

/// Dense causal document mask with the default ceiling.
pub fn boundaries_to_mask(seq: &PackedSequence) -> Result<Vec<Vec<bool>>, PackError> {
    boundaries_to_mask_with_ceiling(seq, DEFAULT_MASK_CEILING)
}

/// Dense causal document mask: `allowed[i][j]` iff position `j` is visible
/// to position `i`. Visibility requires the same non-pad attention group
/// and `j <= i`; pad positions see only themselves.
pub fn boundaries_to_mask_with_ceiling(
    seq: &PackedSequence,
    ceiling: usize,
) -> Result<Vec<Vec<bool>>, PackError> {
    let len = seq.len();
    if len > ceiling {
        return Err(PackError::MaskCeiling { len, ceiling });
    }
    seq.validate()?;

    // Per-position group id, pad marked separately.
    let mut group = vec![0u32; len];
    let mut pad = vec![false; len];
    for seg in &seq.segments {
        let start = seg.seq_start as usize;
        let end = start + seg.length as usize;
        for p in start..end {
            group[p] = seg.group;
            pad[p] = seg.role == SegmentRole::Pad;
        }
    }

    let mut mask = vec![vec![false; len]; len];
    for i in 0..len {
        if pad[i] {
            mask[i][i] = true;
            continue;
        }
        for j in 0..=i {
            mask[i][j] = !pad[j] && group[j] == group[i];
        }
    }
    Ok(mask)
}
