//! Instruction-sample packing: pack-and-pad to exactly L.

use serde::{Deserialize, Serialize};

use super::{PackError, PackOutput, PackStats, PackedSequence, SegmentRef, SegmentRole, TokenSource};
use crate::store::DocId;
use crate::tokenizer::TokenId;

/// Which spans of an instruction sample receive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftLossMode {
    /// Loss on answer spans only (the default convention).
    AnswerOnly,
    /// Loss on every non-pad token of the sample.
    AllTokens,
}

/// One span of an instruction sample. `doc_id`/`doc_start` record
/// provenance when the tokens are a window of a stored document; synthetic
/// text (teacher questions and answers) carries `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftSpan {
    pub role: SegmentRole,
    pub doc_id: Option<DocId>,
    pub doc_start: u64,
    pub tokens: Vec<TokenId>,
}

impl SftSpan {
    pub fn synthetic(role: SegmentRole, tokens: Vec<TokenId>) -> SftSpan {
        SftSpan { role, doc_id: None, doc_start: 0, tokens }
    }
}

/// A whole instruction sample: context/question/answer spans that train as
/// one attention unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftSample {
    pub id: String,
    pub spans: Vec<SftSpan>,
}

impl SftSample {
    pub fn token_len(&self) -> usize {
        self.spans.iter().map(|s| s.tokens.len()).sum()
    }
}

/// Packs instruction samples into exactly-`target_len` sequences.
///
/// Samples are taken greedily in stream order: whole samples are appended
/// while they fit; when the next sample does not fit, the open sequence is
/// closed with a trailing pad segment (pad id, no loss, its own attention
/// group) so every emitted sequence has exactly `target_len` tokens. A
/// sample's spans share one attention group — the answer must see its
/// context — while distinct samples are mutually masked.
///
/// A sample longer than `target_len` is an error naming the sample; no
/// sample is ever split.
pub fn pack_sft(
    samples: &[SftSample],
    target_len: usize,
    pad_id: TokenId,
    loss_mode: SftLossMode,
) -> Result<PackOutput, PackError> {
    if target_len == 0 {
        return Err(PackError::BadConfig("target_len must be >= 1".into()));
    }

    for sample in samples {
        validate_sample(sample, target_len)?;
    }

    let mut stats = PackStats::default();
    let mut sequences = Vec::new();
    let mut builder = SeqBuilder::new(target_len);

    for sample in samples {
        if builder.used + sample.token_len() > target_len {
            sequences.push(builder.finish(pad_id, &mut stats));
            builder = SeqBuilder::new(target_len);
        }
        builder.push_sample(sample, loss_mode);
        stats.tokens_consumed += sample.token_len() as u64;
    }
    if builder.used > 0 {
        sequences.push(builder.finish(pad_id, &mut stats));
    }

    Ok(PackOutput { sequences, stats })
}

fn validate_sample(sample: &SftSample, target_len: usize) -> Result<(), PackError> {
    if sample.spans.is_empty() {
        return Err(PackError::BadSample { id: sample.id.clone(), reason: "no spans".into() });
    }
    for span in &sample.spans {
        if span.tokens.is_empty() {
            return Err(PackError::BadSample {
                id: sample.id.clone(),
                reason: "empty span".into(),
            });
        }
        if matches!(span.role, SegmentRole::Pad | SegmentRole::Pretrain) {
            return Err(PackError::BadSample {
                id: sample.id.clone(),
                reason: format!("span role {:?} is not an instruction role", span.role),
            });
        }
    }
    let len = sample.token_len();
    if len > target_len {
        return Err(PackError::SampleTooLong { id: sample.id.clone(), len, target_len });
    }
    Ok(())
}

struct SeqBuilder {
    target_len: usize,
    used: usize,
    tokens: Vec<TokenId>,
    segments: Vec<SegmentRef>,
    group: u32,
}

impl SeqBuilder {
    fn new(target_len: usize) -> SeqBuilder {
        SeqBuilder {
            target_len,
            used: 0,
            tokens: Vec::with_capacity(target_len),
            segments: Vec::new(),
            group: 0,
        }
    }

    fn push_sample(&mut self, sample: &SftSample, loss_mode: SftLossMode) {
        for span in &sample.spans {
            let loss_flag = match loss_mode {
                SftLossMode::AnswerOnly => span.role == SegmentRole::Answer,
                SftLossMode::AllTokens => true,
            };
            self.segments.push(SegmentRef {
                doc_id: span.doc_id,
                doc_start: span.doc_start,
                seq_start: self.used as u64,
                length: span.tokens.len() as u64,
                loss_flag,
                role: span.role,
                group: self.group,
            });
            self.tokens.extend_from_slice(&span.tokens);
            self.used += span.tokens.len();
        }
        self.group += 1;
    }

    fn finish(mut self, pad_id: TokenId, stats: &mut PackStats) -> PackedSequence {
        let pad = self.target_len - self.used;
        if pad > 0 {
            self.segments.push(SegmentRef {
                doc_id: None,
                doc_start: 0,
                seq_start: self.used as u64,
                length: pad as u64,
                loss_flag: false,
                role: SegmentRole::Pad,
                group: self.group,
            });
            self.tokens.resize(self.target_len, pad_id);
            stats.pad_tokens += pad as u64;
        }
        stats.sequences_emitted += 1;
        stats.tokens_emitted += self.target_len as u64;
        PackedSequence { tokens: self.tokens, segments: self.segments }
    }
}

/// Builds a plain single-span sample from a whole stored document: the
/// entire document is treated as an answer span. This is the convention
/// for ingested short instruction corpora, whose internal turn structure
/// the store does not model.
pub fn doc_as_sft_sample<S: TokenSource>(
    source: &S,
    id: DocId,
) -> Result<SftSample, PackError> {
    let tokens = source.full(id)?;
    Ok(SftSample {
        id: format!("doc:{id}"),
        spans: vec![SftSpan { role: SegmentRole::Answer, doc_id: Some(id), doc_start: 0, tokens }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, context: usize, question: usize, answer: usize) -> SftSample {
        let mut spans = Vec::new();
        if context > 0 {
            spans.push(SftSpan::synthetic(SegmentRole::Context, vec![1; context]));
        }
        if question > 0 {
            spans.push(SftSpan::synthetic(SegmentRole::Question, vec![2; question]));
        }
        spans.push(SftSpan::synthetic(SegmentRole::Answer, vec![3; answer]));
        SftSample { id: id.into(), spans }
    }

    const PAD: TokenId = 258;

    #[test]
    fn two_samples_and_padding() {
        // 100 + 50 tokens at L=200: one sequence, 50 pad tokens.
        let samples = [sample("a", 80, 10, 10), sample("b", 30, 10, 10)];
        let out = pack_sft(&samples, 200, PAD, SftLossMode::AnswerOnly).unwrap();
        assert_eq!(out.sequences.len(), 1);
        let seq = &out.sequences[0];
        assert_eq!(seq.len(), 200);
        assert_eq!(out.stats.pad_tokens, 50);
        let pad_seg = seq.segments.last().unwrap();
        assert_eq!(pad_seg.role, SegmentRole::Pad);
        assert_eq!(pad_seg.length, 50);
        assert!(!pad_seg.loss_flag);
        assert!(seq.tokens[150..].iter().all(|&t| t == PAD));
        seq.validate().unwrap();
        // The two samples are distinct attention groups, pad a third.
        assert_eq!(seq.group_ends(), vec![100, 150, 200]);
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let samples = [sample("a", 100, 50, 50)];
        let out = pack_sft(&samples, 200, PAD, SftLossMode::AnswerOnly).unwrap();
        assert_eq!(out.stats.pad_tokens, 0);
        assert_eq!(out.sequences[0].segments.len(), 3);
    }

    #[test]
    fn oversized_sample_is_rejected_by_name() {
        let samples = [sample("too-big", 150, 30, 21)];
        let err = pack_sft(&samples, 200, PAD, SftLossMode::AnswerOnly).unwrap_err();
        match err {
            PackError::SampleTooLong { id, len, target_len } => {
                assert_eq!(id, "too-big");
                assert_eq!(len, 201);
                assert_eq!(target_len, 200);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn loss_lands_on_answers_only() {
        let samples = [sample("a", 10, 5, 5)];
        let out = pack_sft(&samples, 32, PAD, SftLossMode::AnswerOnly).unwrap();
        for seg in &out.sequences[0].segments {
            assert_eq!(seg.loss_flag, seg.role == SegmentRole::Answer, "{seg:?}");
        }
        let all = pack_sft(&samples, 32, PAD, SftLossMode::AllTokens).unwrap();
        for seg in &all.sequences[0].segments {
            assert_eq!(seg.loss_flag, seg.role != SegmentRole::Pad, "{seg:?}");
        }
    }

    #[test]
    fn greedy_first_fit_preserves_stream_order() {
        let samples = [sample("a", 0, 0, 120), sample("b", 0, 0, 120), sample("c", 0, 0, 60)];
        let out = pack_sft(&samples, 200, PAD, SftLossMode::AnswerOnly).unwrap();
        // a alone (b does not fit), then b + c.
        assert_eq!(out.sequences.len(), 2);
        assert_eq!(out.sequences[0].segments[0].length, 120);
        assert_eq!(out.sequences[1].segments.len(), 3); // b, c, pad
        assert_eq!(out.stats.pad_tokens, 80 + 20);
    }
}
