//! Synthetic long-context instruction data.
//!
//! Two sample shapes, both ending in a teacher-generated QA pair:
//!
//! - **single_doc**: one long document (≥ 8K tokens, truncated at 128K),
//!   with the QA generated from a 2K–8K sentence-aligned subpart of the
//!   retained text and appended after the document.
//! - **concat**: short documents concatenated whole until the context
//!   reaches 128K tokens (the last document is not truncated, so the total
//!   may exceed it), with the QA of one randomly chosen member appended.
//!
//! Samples reference store documents by (doc id, window) rather than
//! inlining 128K token ids; [`to_sft_sample`] resolves them for
//! [`crate::pack::pack_sft`], which packs SFT data into exact-length
//! sequences.

mod sentence;
mod subpart;
mod teacher;

pub use sentence::split_sentences;
pub use subpart::{select_subpart, SubpartSpan, MAX_SUBPART_TOKENS, MIN_SUBPART_TOKENS};
pub use teacher::{
    HttpTeacher, StubTeacher, TeacherClient, TeacherConfig, TeacherError, TeacherMode,
    TeacherRequest, TeacherResponse, DEFAULT_PROMPT_TEMPLATE, DEFAULT_PROMPT_TEMPLATE_ID,
};

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;
use crate::pack::{SegmentRole, SftSample, SftSpan, TokenSource};
use crate::rng::keyed_rng;
use crate::store::{DocId, StoreError};
use crate::tokenizer::{self, TokenizerError};

/// Minimum document length for a single-document sample.
pub const MIN_SINGLE_DOC_TOKENS: u64 = 8_192;
/// Context truncation bound (128K) and concat target length.
pub const MAX_CONTEXT_TOKENS: u64 = 131_072;

#[derive(Debug, Error)]
pub enum LongQaError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("document {doc_id} has {len} tokens; single-document samples need at least {MIN_SINGLE_DOC_TOKENS}")]
    TooShort { doc_id: DocId, len: u64 },
    #[error("document {doc_id} is degenerate: {reason}")]
    DegenerateDocument { doc_id: DocId, reason: String },
    #[error("document stream exhausted at {accumulated} tokens; concat samples need {MAX_CONTEXT_TOKENS}")]
    Shortfall { accumulated: u64 },
    #[error("long-qa config: {0}")]
    BadConfig(String),
    #[error("long-qa i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    SingleDoc,
    Concat,
}

/// A window of a stored document, the by-reference form of sample context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRef {
    pub doc_id: DocId,
    pub start: u64,
    pub length: u64,
}

/// One long-context instruction sample. Context tokens live in the store
/// (see `context_refs`); QA text is inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongQaSample {
    pub kind: SampleKind,
    /// Ordered member documents of the context.
    pub source_doc_ids: Vec<DocId>,
    pub context_refs: Vec<ContextRef>,
    pub question: String,
    pub answer: String,
    /// The document the QA was generated from; for concat samples, the
    /// randomly chosen member.
    pub qa_doc_id: DocId,
    /// The sentence-aligned excerpt the teacher saw. `None` when the QA
    /// passage was a whole short document (below the 2K subpart minimum).
    pub subpart: Option<SubpartSpan>,
}

impl LongQaSample {
    pub fn context_tokens(&self) -> u64 {
        self.context_refs.iter().map(|r| r.length).sum()
    }

    /// The question span as packed after the context.
    pub fn question_tokens(&self) -> Vec<crate::tokenizer::TokenId> {
        tokenizer::tokenize(&format!("\n\nQuestion: {}\nAnswer:", self.question))
    }

    /// The answer span (the loss-bearing part).
    pub fn answer_tokens(&self) -> Vec<crate::tokenizer::TokenId> {
        tokenizer::tokenize(&format!(" {}", self.answer))
    }

    /// Full sample length as packed: context plus rendered QA.
    pub fn total_tokens(&self) -> u64 {
        self.context_tokens()
            + self.question_tokens().len() as u64
            + self.answer_tokens().len() as u64
    }

    pub fn sample_id(&self) -> String {
        match self.kind {
            SampleKind::SingleDoc => format!("single:{}", self.qa_doc_id),
            SampleKind::Concat => {
                let h = fnv1a64(
                    &self
                        .source_doc_ids
                        .iter()
                        .flat_map(|d| d.0.to_le_bytes())
                        .collect::<Vec<u8>>(),
                );
                format!("concat:{h:016x}")
            }
        }
    }
}

/// A short document with its pre-generated QA, the input unit of
/// [`build_concat_sample`].
#[derive(Debug, Clone)]
pub struct DocQa {
    pub doc_id: DocId,
    pub token_length: u64,
    pub question: String,
    pub answer: String,
    pub subpart: Option<SubpartSpan>,
}

fn doc_text<S: TokenSource>(source: &S, id: DocId, limit: u64) -> Result<String, LongQaError> {
    let len = source.length_of(id)?;
    let take = len.min(limit);
    let tokens = source.window(id, 0, take)?;
    // A fixed-token truncation can cut a UTF-8 character; drop the stub.
    Ok(tokenizer::detokenize_prefix(&tokens)?)
}

/// Generates the QA for one document: teacher on a 2K–8K subpart when the
/// document supports one, else on the whole (possibly truncated) text.
pub fn generate_doc_qa<S: TokenSource>(
    source: &S,
    doc_id: DocId,
    teacher: &dyn TeacherClient,
    config: &TeacherConfig,
    seed: u64,
) -> Result<DocQa, LongQaError> {
    let token_length = source.length_of(doc_id)?;
    let text = doc_text(source, doc_id, MAX_CONTEXT_TOKENS)?;

    let (subpart, passage) = if (text.len() as u64) >= MIN_SUBPART_TOKENS {
        match select_subpart(doc_id, &text, seed) {
            Ok(span) => {
                let passage = span.slice(&text).to_string();
                (Some(span), passage)
            }
            // No sentence window in range (e.g. one giant sentence): fall
            // back to the whole text only if it fits the teacher budget.
            Err(LongQaError::DegenerateDocument { .. })
                if (text.len() as u64) <= MAX_SUBPART_TOKENS =>
            {
                (None, text.clone())
            }
            Err(e) => return Err(e),
        }
    } else {
        (None, text.clone())
    };

    let response = teacher.generate(&TeacherRequest {
        passage,
        prompt_template: config.prompt_template_id(),
        model: config.model.clone(),
    })?;

    Ok(DocQa {
        doc_id,
        token_length,
        question: response.question,
        answer: response.answer,
        subpart,
    })
}

/// Builds a single-document sample: context truncated at 128K, QA from a
/// subpart of the retained text.
pub fn build_single_doc_sample<S: TokenSource>(
    source: &S,
    doc_id: DocId,
    teacher: &dyn TeacherClient,
    config: &TeacherConfig,
    seed: u64,
) -> Result<LongQaSample, LongQaError> {
    let len = source.length_of(doc_id)?;
    if len < MIN_SINGLE_DOC_TOKENS {
        return Err(LongQaError::TooShort { doc_id, len });
    }
    let context_len = len.min(MAX_CONTEXT_TOKENS);
    let text = doc_text(source, doc_id, MAX_CONTEXT_TOKENS)?;

    let span = select_subpart(doc_id, &text, seed)?;
    let passage = span.slice(&text).to_string();
    let response = teacher.generate(&TeacherRequest {
        passage,
        prompt_template: config.prompt_template_id(),
        model: config.model.clone(),
    })?;

    Ok(LongQaSample {
        kind: SampleKind::SingleDoc,
        source_doc_ids: vec![doc_id],
        context_refs: vec![ContextRef { doc_id, start: 0, length: context_len }],
        question: response.question,
        answer: response.answer,
        qa_doc_id: doc_id,
        subpart: Some(span),
    })
}

/// Concatenates whole documents until the context reaches 128K tokens and
/// appends the QA of one member chosen uniformly by seed. Consumes a
/// prefix of `docs`; returns the sample and how many documents it used.
pub fn build_concat_sample(
    docs: &[DocQa],
    seed: u64,
) -> Result<(LongQaSample, usize), LongQaError> {
    let mut total = 0u64;
    let mut used = 0usize;
    for doc in docs {
        total += doc.token_length;
        used += 1;
        if total >= MAX_CONTEXT_TOKENS {
            break;
        }
    }
    if total < MAX_CONTEXT_TOKENS {
        return Err(LongQaError::Shortfall { accumulated: total });
    }

    let members = &docs[..used];
    let member_key =
        fnv1a64(&members.iter().flat_map(|d| d.doc_id.0.to_le_bytes()).collect::<Vec<u8>>());
    let mut rng = keyed_rng(seed, "longqa/concat_choice", &[member_key]);
    let chosen = &members[rng.random_range(0..members.len())];

    Ok((
        LongQaSample {
            kind: SampleKind::Concat,
            source_doc_ids: members.iter().map(|d| d.doc_id).collect(),
            context_refs: members
                .iter()
                .map(|d| ContextRef { doc_id: d.doc_id, start: 0, length: d.token_length })
                .collect(),
            question: chosen.question.clone(),
            answer: chosen.answer.clone(),
            qa_doc_id: chosen.doc_id,
            subpart: chosen.subpart.clone(),
        },
        used,
    ))
}

/// Why a document was skipped during pipeline generation.
#[derive(Debug, Clone, Serialize)]
pub struct SkipReport {
    pub doc_id: DocId,
    pub error: String,
}

/// Runs `task` over `items` with at most `concurrency` worker threads.
/// Results come back in input order, so parallelism never changes output.
fn bounded_map<T: Sync, R: Send>(
    items: &[T],
    concurrency: usize,
    task: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    let concurrency = concurrency.clamp(1, items.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = task(i, &items[i]);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("task ran"))
        .collect()
}

/// Builds single-document samples for every eligible id, skipping and
/// reporting failures. Teacher calls run with a bounded in-flight cap.
pub fn build_single_doc_samples<S: TokenSource + Sync>(
    source: &S,
    doc_ids: &[DocId],
    teacher: &dyn TeacherClient,
    config: &TeacherConfig,
    seed: u64,
    concurrency: usize,
) -> (Vec<LongQaSample>, Vec<SkipReport>) {
    let results = bounded_map(doc_ids, concurrency, |_, &id| {
        build_single_doc_sample(source, id, teacher, config, seed)
    });
    split_results(doc_ids, results)
}

/// Generates per-document QA for a concat stream, then greedily cuts
/// samples off the stream until it cannot reach 128K anymore. Documents
/// whose QA generation failed are skipped and reported.
pub fn build_concat_samples<S: TokenSource + Sync>(
    source: &S,
    doc_ids: &[DocId],
    teacher: &dyn TeacherClient,
    config: &TeacherConfig,
    seed: u64,
    concurrency: usize,
    max_samples: usize,
) -> Result<(Vec<LongQaSample>, Vec<SkipReport>), LongQaError> {
    let results = bounded_map(doc_ids, concurrency, |_, &id| {
        generate_doc_qa(source, id, teacher, config, seed)
    });
    let (docs, skipped) = split_results(doc_ids, results);

    let mut samples = Vec::new();
    let mut rest = docs.as_slice();
    while samples.len() < max_samples {
        match build_concat_sample(rest, seed) {
            Ok((sample, used)) => {
                samples.push(sample);
                rest = &rest[used..];
            }
            Err(LongQaError::Shortfall { .. }) => break,
            Err(other) => return Err(other),
        }
    }
    Ok((samples, skipped))
}

fn split_results<T>(
    doc_ids: &[DocId],
    results: Vec<Result<T, LongQaError>>,
) -> (Vec<T>, Vec<SkipReport>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (id, result) in doc_ids.iter().zip(results) {
        match result {
            Ok(value) => ok.push(value),
            Err(e) => skipped.push(SkipReport { doc_id: *id, error: e.to_string() }),
        }
    }
    (ok, skipped)
}

/// Resolves a sample into spans for [`crate::pack::pack_sft`]: one context
/// span per member document, then the question and answer rendered as
/// text. The whole sample trains as one attention group; loss flags are
/// the packer's concern.
pub fn to_sft_sample<S: TokenSource>(
    source: &S,
    sample: &LongQaSample,
) -> Result<SftSample, LongQaError> {
    let mut spans = Vec::with_capacity(sample.context_refs.len() + 2);
    for r in &sample.context_refs {
        spans.push(SftSpan {
            role: SegmentRole::Context,
            doc_id: Some(r.doc_id),
            doc_start: r.start,
            tokens: source.window(r.doc_id, r.start, r.length)?,
        });
    }
    spans.push(SftSpan::synthetic(SegmentRole::Question, sample.question_tokens()));
    spans.push(SftSpan::synthetic(SegmentRole::Answer, sample.answer_tokens()));
    Ok(SftSample { id: sample.sample_id(), spans })
}

/// Writes samples as JSON-lines.
pub fn write_samples<W: Write>(out: &mut W, samples: &[LongQaSample]) -> std::io::Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut *out, sample)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a samples.jsonl file.
pub fn read_samples(path: &std::path::Path) -> Result<Vec<LongQaSample>, LongQaError> {
    let file = std::fs::File::open(path)
        .map_err(|source| LongQaError::Io { path: path.to_path_buf(), source })?;
    let mut samples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| LongQaError::Io { path: path.to_path_buf(), source })?;
        let sample: LongQaSample = serde_json::from_str(&line).map_err(|e| {
            LongQaError::BadConfig(format!("bad sample line in {}: {e}", path.display()))
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::InMemorySource;
    use crate::tokenizer::tokenize;

    /// A document of `sentences` sentences of exactly `sentence_len` bytes.
    fn text_doc(src: &mut InMemorySource, id: u64, sentence_len: usize, sentences: usize) -> DocId {
        let mut text = String::new();
        for i in 0..sentences {
            let mut sentence = String::new();
            if i > 0 {
                sentence.push(' ');
            }
            sentence.push('S');
            while sentence.len() < sentence_len - 1 {
                sentence.push('x');
            }
            sentence.push('.');
            text.push_str(&sentence);
        }
        let doc = DocId(id);
        src.insert(doc, tokenize(&text));
        doc
    }

    fn stub_config() -> TeacherConfig {
        TeacherConfig::default()
    }

    #[test]
    fn single_doc_truncates_at_128k() {
        let mut src = InMemorySource::new();
        let doc = text_doc(&mut src, 1, 1000, 150); // 150,000 tokens
        assert!(src.length_of(doc).unwrap() > MAX_CONTEXT_TOKENS);
        let sample = build_single_doc_sample(&src, doc, &StubTeacher, &stub_config(), 7).unwrap();
        assert_eq!(sample.context_tokens(), MAX_CONTEXT_TOKENS);
        assert_eq!(sample.kind, SampleKind::SingleDoc);
        let span = sample.subpart.unwrap();
        assert!((MIN_SUBPART_TOKENS..=MAX_SUBPART_TOKENS).contains(&span.token_length));
    }

    #[test]
    fn single_doc_lower_bound_is_enforced() {
        let mut src = InMemorySource::new();
        let doc = text_doc(&mut src, 2, 700, 10); // 7,000 tokens
        let err = build_single_doc_sample(&src, doc, &StubTeacher, &stub_config(), 7).unwrap_err();
        assert!(matches!(err, LongQaError::TooShort { .. }));
    }

    #[test]
    fn single_doc_exactly_8k_keeps_whole_context() {
        let mut src = InMemorySource::new();
        let doc = text_doc(&mut src, 3, 1024, 8); // 8,192 tokens
        assert_eq!(src.length_of(doc).unwrap(), 8_192);
        let sample = build_single_doc_sample(&src, doc, &StubTeacher, &stub_config(), 7).unwrap();
        assert_eq!(sample.context_tokens(), 8_192);
    }

    #[test]
    fn concat_collects_docs_until_128k_without_truncation() {
        let mut src = InMemorySource::new();
        let config = stub_config();
        // 40,000-token docs: ceil(131072/40000) = 4 members, total 160,000.
        let ids: Vec<DocId> = (0..6).map(|i| text_doc(&mut src, 10 + i, 800, 50)).collect();
        let docs: Vec<DocQa> = ids
            .iter()
            .map(|&id| generate_doc_qa(&src, id, &StubTeacher, &config, 3).unwrap())
            .collect();
        assert!(docs.iter().all(|d| d.token_length == 40_000));

        let (sample, used) = build_concat_sample(&docs, 3).unwrap();
        assert_eq!(used, 4);
        assert_eq!(sample.context_tokens(), 160_000);
        assert!(sample.source_doc_ids.contains(&sample.qa_doc_id));
        // The appended QA is the chosen member's QA.
        let chosen = docs.iter().find(|d| d.doc_id == sample.qa_doc_id).unwrap();
        assert_eq!(sample.question, chosen.question);
        assert_eq!(sample.answer, chosen.answer);
    }

    #[test]
    fn concat_single_giant_doc_is_one_member() {
        let mut src = InMemorySource::new();
        let config = stub_config();
        let id = text_doc(&mut src, 30, 1000, 140); // 140,000 tokens
        let docs = vec![generate_doc_qa(&src, id, &StubTeacher, &config, 3).unwrap()];
        let (sample, used) = build_concat_sample(&docs, 3).unwrap();
        assert_eq!(used, 1);
        assert_eq!(sample.source_doc_ids, vec![id]);
    }

    #[test]
    fn concat_shortfall_is_an_error() {
        let mut src = InMemorySource::new();
        let config = stub_config();
        let id = text_doc(&mut src, 500, 500, 20); // 10,000 tokens
        let docs = vec![generate_doc_qa(&src, id, &StubTeacher, &config, 3).unwrap()];
        let err = build_concat_sample(&docs, 3).unwrap_err();
        assert!(matches!(err, LongQaError::Shortfall { accumulated: 10_000 }));
    }

    #[test]
    fn pipeline_is_deterministic_and_reports_skips() {
        let mut src = InMemorySource::new();
        let mut ids: Vec<DocId> = (0..5).map(|i| text_doc(&mut src, 50 + i, 1000, 12)).collect();
        // One document below the single-doc floor.
        ids.push(text_doc(&mut src, 99, 700, 4));
        let config = stub_config();

        let (a, skipped_a) = build_single_doc_samples(&src, &ids, &StubTeacher, &config, 11, 4);
        let (b, skipped_b) = build_single_doc_samples(&src, &ids, &StubTeacher, &config, 11, 1);
        assert_eq!(a, b, "worker count must not change output");
        assert_eq!(a.len(), 5);
        assert_eq!(skipped_a.len(), 1);
        assert_eq!(skipped_a[0].doc_id, ids[5]);
        assert_eq!(skipped_a.len(), skipped_b.len());
    }

    #[test]
    fn sft_conversion_has_context_question_answer_spans() {
        let mut src = InMemorySource::new();
        let doc = text_doc(&mut src, 60, 1024, 10);
        let sample = build_single_doc_sample(&src, doc, &StubTeacher, &stub_config(), 7).unwrap();
        let sft = to_sft_sample(&src, &sample).unwrap();
        assert_eq!(sft.spans.len(), 3);
        assert_eq!(sft.spans[0].role, SegmentRole::Context);
        assert_eq!(sft.spans[0].tokens.len() as u64, sample.context_tokens());
        assert_eq!(sft.spans[1].role, SegmentRole::Question);
        assert_eq!(sft.spans[2].role, SegmentRole::Answer);
    }

    #[test]
    fn samples_round_trip_through_jsonl() {
        let mut src = InMemorySource::new();
        let doc = text_doc(&mut src, 70, 1024, 10);
        let sample = build_single_doc_sample(&src, doc, &StubTeacher, &stub_config(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut buf = Vec::new();
        write_samples(&mut buf, std::slice::from_ref(&sample)).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let read = read_samples(&path).unwrap();
        assert_eq!(read, vec![sample]);
    }
}
