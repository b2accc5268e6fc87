//! Short-document packing: concat-and-truncate.

use rand::seq::SliceRandom;

use super::{PackError, PackOutput, PackStats, PackedSequence, SegmentRef, SegmentRole, TokenSource};
use crate::rng::keyed_rng;
use crate::store::DocId;

/// Packs short documents into exactly-`target_len` sequences.
///
/// Documents are visited in an order shuffled by `seed`; whole documents
/// are concatenated until the sequence reaches `target_len`, the document
/// that crosses the boundary is truncated there, and its remainder is
/// discarded rather than carried into the next sequence. A tail that never
/// reaches `target_len` is dropped and reported in the stats, so
/// `tokens_consumed == tokens_emitted + tokens_discarded`.
pub fn pack_short<S: TokenSource>(
    source: &S,
    doc_ids: &[DocId],
    target_len: usize,
    seed: u64,
) -> Result<PackOutput, PackError> {
    let mut order = doc_ids.to_vec();
    order.shuffle(&mut keyed_rng(seed, "pack_short/shuffle", &[target_len as u64]));
    pack_short_in_order(source, &order, target_len)
}

/// [`pack_short`] without the shuffle: documents are consumed exactly in
/// the order given.
pub fn pack_short_in_order<S: TokenSource>(
    source: &S,
    doc_ids: &[DocId],
    target_len: usize,
) -> Result<PackOutput, PackError> {
    if target_len == 0 {
        return Err(PackError::BadConfig("target_len must be >= 1".into()));
    }

    let mut stats = PackStats::default();
    let mut sequences = Vec::new();
    let mut tokens = Vec::with_capacity(target_len);
    let mut segments: Vec<SegmentRef> = Vec::new();

    for &id in doc_ids {
        let doc_len = source.length_of(id)? as usize;
        stats.tokens_consumed += doc_len as u64;

        let needed = target_len - tokens.len();
        let take = doc_len.min(needed);
        segments.push(SegmentRef {
            doc_id: Some(id),
            doc_start: 0,
            seq_start: tokens.len() as u64,
            length: take as u64,
            loss_flag: true,
            role: SegmentRole::Pretrain,
            group: segments.len() as u32,
        });
        tokens.extend(source.window(id, 0, take as u64)?);

        if tokens.len() == target_len {
            stats.tokens_discarded += (doc_len - take) as u64;
            stats.tokens_emitted += target_len as u64;
            stats.sequences_emitted += 1;
            sequences.push(PackedSequence {
                tokens: std::mem::replace(&mut tokens, Vec::with_capacity(target_len)),
                segments: std::mem::take(&mut segments),
            });
        }
    }

    // Insufficient tail: dropped, not emitted.
    stats.tokens_discarded += tokens.len() as u64;

    Ok(PackOutput { sequences, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::InMemorySource;

    #[test]
    fn hand_simulation_of_truncation_rule() {
        // Docs of lengths [5, 7, 4] at L=8 in identity order:
        // seq1 = doc1(5) + doc2[0..3]; doc2's remaining 4 tokens are
        // discarded; doc3 starts the (unfinished, dropped) next sequence.
        let mut src = InMemorySource::new();
        let d1 = src.add_doc(1, 5);
        let d2 = src.add_doc(2, 7);
        let d3 = src.add_doc(3, 4);
        let out = pack_short_in_order(&src, &[d1, d2, d3], 8).unwrap();

        assert_eq!(out.sequences.len(), 1);
        let seq = &out.sequences[0];
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.segments.len(), 2);
        assert_eq!(seq.segments[0].doc_id, Some(d1));
        assert_eq!(seq.segments[0].length, 5);
        assert_eq!(seq.segments[1].doc_id, Some(d2));
        assert_eq!(seq.segments[1].length, 3);
        assert_eq!(seq.tokens[..5], src.window(d1, 0, 5).unwrap()[..]);
        assert_eq!(seq.tokens[5..], src.window(d2, 0, 3).unwrap()[..]);

        // 4 discarded from doc2's tail + 4 from the dropped doc3 tail.
        assert_eq!(out.stats.tokens_discarded, 8);
        assert_eq!(out.stats.tokens_consumed, 16);
        assert_eq!(out.stats.tokens_emitted, 8);
    }

    #[test]
    fn exact_fit_single_doc() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(1, 8);
        let out = pack_short_in_order(&src, &[d], 8).unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(out.sequences[0].segments.len(), 1);
        assert_eq!(out.stats.tokens_discarded, 0);
    }

    #[test]
    fn insufficient_tail_is_dropped() {
        let mut src = InMemorySource::new();
        let d1 = src.add_doc(1, 3);
        let d2 = src.add_doc(2, 3);
        let out = pack_short_in_order(&src, &[d1, d2], 8).unwrap();
        assert!(out.sequences.is_empty());
        assert_eq!(out.stats.tokens_discarded, 6);
    }

    #[test]
    fn empty_stream_is_empty_output() {
        let src = InMemorySource::new();
        let out = pack_short_in_order(&src, &[], 8).unwrap();
        assert!(out.sequences.is_empty());
        assert_eq!(out.stats, PackStats::default());
    }

    #[test]
    fn oversized_doc_is_truncated_at_boundary() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(1, 20);
        let out = pack_short_in_order(&src, &[d], 8).unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(out.stats.tokens_discarded, 12);
    }

    #[test]
    fn shuffle_is_deterministic_in_seed() {
        let mut src = InMemorySource::new();
        let ids: Vec<_> = (0..50).map(|i| src.add_doc(i, 3 + (i as usize % 7))).collect();
        let a = pack_short(&src, &ids, 16, 7).unwrap();
        let b = pack_short(&src, &ids, 16, 7).unwrap();
        let c = pack_short(&src, &ids, 16, 8).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.stats, b.stats);
        assert_ne!(
            a.sequences.iter().map(|s| s.segments[0].doc_id).collect::<Vec<_>>(),
            c.sequences.iter().map(|s| s.segments[0].doc_id).collect::<Vec<_>>(),
            "different seeds should shuffle differently"
        );
    }
}
