//! Nesting single-document subsequences into one longer sequence.

use std::collections::HashSet;

use super::{PackError, PackedSequence, SegmentRef};

/// Packs `k` single-segment subsequences of equal length `L_sub` into one
/// sequence of `target_len = k·L_sub`, preserving document-masking
/// boundaries: subsequence i becomes attention group i at offset
/// `i·L_sub`. All subsequences must come from distinct documents.
pub fn pack_grouped(
    subsequences: Vec<PackedSequence>,
    target_len: usize,
) -> Result<PackedSequence, PackError> {
    if subsequences.is_empty() {
        return Err(PackError::BadConfig("cannot group zero subsequences".into()));
    }
    let sub_len = subsequences[0].len();
    let count = subsequences.len();
    if sub_len == 0 || count * sub_len != target_len {
        return Err(PackError::GroupSizeMismatch { count, sub_len, target_len });
    }

    let mut seen = HashSet::new();
    for (index, sub) in subsequences.iter().enumerate() {
        if sub.len() != sub_len {
            return Err(PackError::GroupSizeMismatch { count, sub_len: sub.len(), target_len });
        }
        if sub.segments.len() != 1 {
            return Err(PackError::NotSingleSegment { index });
        }
        if let Some(id) = sub.segments[0].doc_id {
            if !seen.insert(id) {
                return Err(PackError::DuplicateDoc(id));
            }
        } else {
            return Err(PackError::NotSingleSegment { index });
        }
    }

    let mut tokens = Vec::with_capacity(target_len);
    let mut segments = Vec::with_capacity(count);
    for (i, sub) in subsequences.into_iter().enumerate() {
        let src = &sub.segments[0];
        segments.push(SegmentRef {
            doc_id: src.doc_id,
            doc_start: src.doc_start,
            seq_start: (i * sub_len) as u64,
            length: sub_len as u64,
            loss_flag: src.loss_flag,
            role: src.role,
            group: i as u32,
        });
        tokens.extend(sub.tokens);
    }

    Ok(PackedSequence { tokens, segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::{make_long_sequences, InMemorySource};

    fn subsequences(lens: &[usize], target: usize) -> Vec<PackedSequence> {
        let mut src = InMemorySource::new();
        lens.iter()
            .enumerate()
            .map(|(i, &len)| {
                let d = src.add_doc(i as u64 + 1, len);
                make_long_sequences(&src, &[d], target, 4, 1, 0)
                    .unwrap()
                    .sequences
                    .remove(0)
            })
            .collect()
    }

    #[test]
    fn four_into_one_has_boundaries_at_quarter_marks() {
        // The production shape: four 65,536-token documents into 262,144.
        // Scaled to 4×64 -> 256 so the test stays cheap; offsets scale
        // identically.
        let subs = subsequences(&[64, 64, 64, 64], 64);
        let seq = pack_grouped(subs, 256).unwrap();
        assert_eq!(seq.len(), 256);
        let starts: Vec<u64> = seq.segments.iter().map(|s| s.seq_start).collect();
        assert_eq!(starts, vec![0, 64, 128, 192]);
        assert_eq!(seq.group_ends(), vec![64, 128, 192, 256]);
        seq.validate().unwrap();
    }

    #[test]
    fn identity_when_k_is_one() {
        let subs = subsequences(&[64], 64);
        let expected = subs[0].clone();
        let seq = pack_grouped(subs, 64).unwrap();
        assert_eq!(seq.tokens, expected.tokens);
        assert_eq!(seq.segments, expected.segments);
    }

    #[test]
    fn duplicate_document_is_rejected() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(1, 64);
        let one = make_long_sequences(&src, &[d], 64, 4, 1, 0).unwrap().sequences.remove(0);
        let err = pack_grouped(vec![one.clone(), one], 128).unwrap_err();
        assert!(matches!(err, PackError::DuplicateDoc(_)));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let subs = subsequences(&[64, 64, 64], 64);
        let err = pack_grouped(subs, 256).unwrap_err();
        assert!(matches!(err, PackError::GroupSizeMismatch { count: 3, sub_len: 64, target_len: 256 }));
    }
}
