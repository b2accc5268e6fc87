//! Long-document windowing.

use rand::Rng;

use super::{PackError, PackOutput, PackStats, PackedSequence, SegmentRef, SegmentRole, TokenSource};
use crate::rng::keyed_rng;
use crate::store::DocId;

/// Cuts exactly-`target_len` windows out of long documents.
///
/// Documents shorter than `target_len` are filtered out and counted. A
/// document of length in `[L, superlong_factor·L)` contributes one window
/// at a seed-derived offset uniform over its admissible range. A document
/// of at least `superlong_factor·L` tokens contributes
/// `min(⌊len/L⌋, max_segments)` pairwise-disjoint windows, so a single
/// super-long document cannot flood the dataset.
///
/// Window offsets are keyed by `(seed, doc_id)`, never by traversal order,
/// and the output is sorted by `(doc_id, doc_start)` so any parallel or
/// reordered execution produces identical bytes.
pub fn make_long_sequences<S: TokenSource>(
    source: &S,
    doc_ids: &[DocId],
    target_len: usize,
    superlong_factor: usize,
    max_segments: usize,
    seed: u64,
) -> Result<PackOutput, PackError> {
    if target_len == 0 {
        return Err(PackError::BadConfig("target_len must be >= 1".into()));
    }
    if superlong_factor < 1 {
        return Err(PackError::BadConfig("superlong_factor must be >= 1".into()));
    }
    if max_segments < 1 {
        return Err(PackError::BadConfig("max_segments must be >= 1".into()));
    }

    let target = target_len as u64;
    let mut stats = PackStats::default();
    let mut windows: Vec<(DocId, u64)> = Vec::new();

    for &id in doc_ids {
        let len = source.length_of(id)?;
        if len < target {
            stats.docs_filtered += 1;
            continue;
        }
        for offset in window_offsets(id, len, target, superlong_factor as u64, max_segments, seed) {
            windows.push((id, offset));
        }
    }

    windows.sort_unstable();

    let mut sequences = Vec::with_capacity(windows.len());
    for (id, offset) in windows {
        let tokens = source.window(id, offset, target)?;
        stats.tokens_emitted += target;
        stats.tokens_consumed += target;
        stats.sequences_emitted += 1;
        sequences.push(PackedSequence {
            tokens,
            segments: vec![SegmentRef {
                doc_id: Some(id),
                doc_start: offset,
                seq_start: 0,
                length: target,
                loss_flag: true,
                role: SegmentRole::Pretrain,
                group: 0,
            }],
        });
    }

    Ok(PackOutput { sequences, stats })
}

/// Offsets of the windows a document contributes, pairwise disjoint.
///
/// For k windows in a document of `len` tokens, k starts are drawn
/// uniformly from `[0, len - k·L]`, sorted, and the i-th is shifted right
/// by `i·L`. This yields disjoint windows whose joint distribution is
/// uniform over all disjoint placements.
fn window_offsets(
    id: DocId,
    len: u64,
    target: u64,
    superlong_factor: u64,
    max_segments: usize,
    seed: u64,
) -> Vec<u64> {
    debug_assert!(len >= target);
    let mut rng = keyed_rng(seed, "pack_long/offsets", &[id.0, target]);
    let k = if len >= superlong_factor.saturating_mul(target) {
        ((len / target) as usize).min(max_segments)
    } else {
        1
    };
    let slack = len - k as u64 * target;
    let mut starts: Vec<u64> = (0..k).map(|_| rng.random_range(0..=slack)).collect();
    starts.sort_unstable();
    starts.iter().enumerate().map(|(i, s)| s + i as u64 * target).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::InMemorySource;

    #[test]
    fn short_doc_is_filtered() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(1, 99);
        let out = make_long_sequences(&src, &[d], 100, 4, 4, 0).unwrap();
        assert!(out.sequences.is_empty());
        assert_eq!(out.stats.docs_filtered, 1);
    }

    #[test]
    fn exact_length_doc_has_zero_freedom() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(1, 100);
        let out = make_long_sequences(&src, &[d], 100, 4, 4, 0).unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(out.sequences[0].segments[0].doc_start, 0);
        assert_eq!(out.sequences[0].len(), 100);
    }

    #[test]
    fn superlong_doc_yields_disjoint_windows() {
        let mut src = InMemorySource::new();
        let target = 64usize;
        let d = src.add_doc(1, 10 * target);
        let out = make_long_sequences(&src, &[d], target, 4, 3, 9).unwrap();
        assert_eq!(out.sequences.len(), 3);

        // Brute-force interval overlap check.
        let mut intervals: Vec<(u64, u64)> = out
            .sequences
            .iter()
            .map(|s| {
                let seg = &s.segments[0];
                (seg.doc_start, seg.doc_start + seg.length)
            })
            .collect();
        intervals.sort_unstable();
        for pair in intervals.windows(2) {
            assert!(pair[0].1 <= pair[1].0, "windows overlap: {pair:?}");
        }
        for &(start, end) in &intervals {
            assert!(end <= 10 * target as u64, "window [{start},{end}) outside document");
        }
    }

    #[test]
    fn window_count_capped_by_doc_length_and_max_segments() {
        let mut src = InMemorySource::new();
        // len = 5L with factor 4: superlong, floor(5) windows but capped at 4.
        let d = src.add_doc(1, 5 * 32);
        let out = make_long_sequences(&src, &[d], 32, 4, 4, 0).unwrap();
        assert_eq!(out.sequences.len(), 4);
        // len = 3.5L with factor 4: not superlong, single window.
        let mut src2 = InMemorySource::new();
        let d2 = src2.add_doc(2, 112);
        let out2 = make_long_sequences(&src2, &[d2], 32, 4, 4, 0).unwrap();
        assert_eq!(out2.sequences.len(), 1);
    }

    #[test]
    fn output_independent_of_input_order() {
        let mut src = InMemorySource::new();
        let ids: Vec<_> = (0..20).map(|i| src.add_doc(i, 64 + 17 * i as usize)).collect();
        let mut reversed = ids.clone();
        reversed.reverse();
        let a = make_long_sequences(&src, &ids, 64, 4, 4, 5).unwrap();
        let b = make_long_sequences(&src, &reversed, 64, 4, 4, 5).unwrap();
        assert_eq!(a.sequences, b.sequences);
    }

    #[test]
    fn tokens_match_source_window() {
        let mut src = InMemorySource::new();
        let d = src.add_doc(3, 200);
        let out = make_long_sequences(&src, &[d], 50, 4, 4, 11).unwrap();
        let seg = &out.sequences[0].segments[0];
        assert_eq!(
            out.sequences[0].tokens,
            src.window(d, seg.doc_start, seg.length).unwrap()
        );
    }
}
