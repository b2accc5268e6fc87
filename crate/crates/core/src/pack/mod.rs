//! Fixed-length sequence packing with per-document attention boundaries.
//!
//! Four regimes build exactly-L-token training sequences:
//!
//! - [`pack_short`]: shuffle short documents, concatenate until the
//!   sequence fills, truncate at the L boundary and discard the remainder
//! - [`make_long_sequences`]: keep only documents of at least L tokens and
//!   cut one L-window each; documents far beyond L contribute a few
//!   disjoint windows instead of an excessive number of examples
//! - [`pack_grouped`]: nest k single-document subsequences into one longer
//!   sequence (e.g. four 64K documents into a 256K sequence)
//! - [`pack_sft`]: pack whole instruction samples greedily and pad the
//!   tail to exactly L
//!
//! Every sequence records [`SegmentRef`]s: which document window sits
//! where, whether it receives loss, and its attention group. Tokens may
//! only attend within their group (and causally), which is the document
//! for pre-training data and the whole sample for SFT data. Pad positions
//! attend to nothing but themselves and receive no loss.

mod dataset;
mod grouped;
mod long;
mod mask;
mod sft;
mod short;

pub use dataset::{PackedDataset, PackedDatasetWriter, SequenceIndexEntry};
pub use grouped::pack_grouped;
pub use long::make_long_sequences;
pub use mask::{boundaries_to_mask, boundaries_to_mask_with_ceiling, DEFAULT_MASK_CEILING};
pub use sft::{doc_as_sft_sample, pack_sft, SftLossMode, SftSample, SftSpan};
pub use short::{pack_short, pack_short_in_order};

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{DocId, Store, StoreError, StoreIndexEntry};
use crate::tokenizer::TokenId;

#[derive(Debug, Error)]
pub enum PackError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid packing config: {0}")]
    BadConfig(String),
    #[error("group size mismatch: {count} subsequences of {sub_len} tokens cannot fill {target_len}")]
    GroupSizeMismatch { count: usize, sub_len: usize, target_len: usize },
    #[error("subsequence {index} must contain exactly one segment to be nested")]
    NotSingleSegment { index: usize },
    #[error("duplicate document {0} in group; nested subsequences must come from distinct documents")]
    DuplicateDoc(DocId),
    #[error("sample {id}: {len} tokens exceed the sequence length {target_len}")]
    SampleTooLong { id: String, len: usize, target_len: usize },
    #[error("sample {id}: {reason}")]
    BadSample { id: String, reason: String },
    #[error("sequence length {len} exceeds the dense-mask ceiling {ceiling}; use the streaming group-boundary export (PackedSequence::group_ends) for trainer-scale sequences")]
    MaskCeiling { len: usize, ceiling: usize },
    #[error("invalid packed sequence: {0}")]
    InvalidSequence(String),
    #[error("corrupt dataset index at line {line}: {reason}")]
    CorruptIndex { line: usize, reason: String },
    #[error("dataset i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PackError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PackError {
        let path = path.into();
        move |source| PackError::Io { path, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    Pretrain,
    Context,
    Question,
    Answer,
    Pad,
}

/// One contiguous piece of a packed sequence.
///
/// `doc_id` is `None` for pad segments and for synthesized text (teacher
/// questions/answers) that has no source document. `group` is the
/// attention unit: positions attend only within their group. Pre-training
/// packers give every document window its own group; the SFT packer puts
/// a sample's context/question/answer segments into one shared group so
/// the answer can attend to its context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub doc_id: Option<DocId>,
    pub doc_start: u64,
    pub seq_start: u64,
    pub length: u64,
    pub loss_flag: bool,
    pub role: SegmentRole,
    pub group: u32,
}

impl SegmentRef {
    pub fn is_pad(&self) -> bool {
        self.role == SegmentRole::Pad
    }
}

/// A fixed-length training sequence: exactly `target_len` tokens plus the
/// segment map that locates every token's source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub tokens: Vec<TokenId>,
    pub segments: Vec<SegmentRef>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Cumulative end offsets of the attention groups, the boundary format
    /// trainers consume (`[5, 8]` for groups of 5 and 3 in an 8-token
    /// sequence). The final entry always equals the sequence length.
    pub fn group_ends(&self) -> Vec<u64> {
        let mut ends = Vec::new();
        let mut cur_group: Option<u32> = None;
        for seg in &self.segments {
            if cur_group == Some(seg.group) {
                *ends.last_mut().expect("non-empty while a group is open") =
                    seg.seq_start + seg.length;
            } else {
                cur_group = Some(seg.group);
                ends.push(seg.seq_start + seg.length);
            }
        }
        ends
    }

    /// Structural invariants: segments contiguous from offset 0, lengths
    /// positive, groups consecutive, and the segment map covering the token
    /// buffer exactly.
    pub fn validate(&self) -> Result<(), PackError> {
        let mut offset = 0u64;
        let mut prev_group: Option<u32> = None;
        for seg in &self.segments {
            if seg.length == 0 {
                return Err(PackError::InvalidSequence("zero-length segment".into()));
            }
            if seg.seq_start != offset {
                return Err(PackError::InvalidSequence(format!(
                    "segment at {} does not continue the sequence (expected {offset})",
                    seg.seq_start
                )));
            }
            match prev_group {
                None => {
                    if seg.group != 0 {
                        return Err(PackError::InvalidSequence("first group must be 0".into()));
                    }
                }
                Some(p) => {
                    if seg.group != p && seg.group != p + 1 {
                        return Err(PackError::InvalidSequence(format!(
                            "group ids must be consecutive (saw {p} then {})",
                            seg.group
                        )));
                    }
                }
            }
            prev_group = Some(seg.group);
            offset += seg.length;
        }
        if offset != self.tokens.len() as u64 {
            return Err(PackError::InvalidSequence(format!(
                "segments cover {offset} tokens but the sequence has {}",
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

/// Token accounting for a packing run. `tokens_consumed` counts every
/// token of every visited document, so for the short regime
/// `tokens_consumed == tokens_emitted + tokens_discarded` exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackStats {
    pub sequences_emitted: u64,
    pub tokens_emitted: u64,
    pub tokens_consumed: u64,
    pub tokens_discarded: u64,
    pub docs_filtered: u64,
    pub pad_tokens: u64,
}

impl PackStats {
    pub fn absorb(&mut self, other: &PackStats) {
        self.sequences_emitted += other.sequences_emitted;
        self.tokens_emitted += other.tokens_emitted;
        self.tokens_consumed += other.tokens_consumed;
        self.tokens_discarded += other.tokens_discarded;
        self.docs_filtered += other.docs_filtered;
        self.pad_tokens += other.pad_tokens;
    }
}

#[derive(Debug)]
pub struct PackOutput {
    pub sequences: Vec<PackedSequence>,
    pub stats: PackStats,
}

/// Random access to document tokens, so packers can run against a real
/// [`Store`] or an in-memory fixture.
pub trait TokenSource {
    fn length_of(&self, id: DocId) -> Result<u64, StoreError>;
    fn window(&self, id: DocId, start: u64, len: u64) -> Result<Vec<TokenId>, StoreError>;

    fn full(&self, id: DocId) -> Result<Vec<TokenId>, StoreError> {
        let len = self.length_of(id)?;
        self.window(id, 0, len)
    }
}

impl TokenSource for Store {
    fn length_of(&self, id: DocId) -> Result<u64, StoreError> {
        Ok(self.entry(id).ok_or(StoreError::DocNotFound(id))?.length)
    }

    fn window(&self, id: DocId, start: u64, len: u64) -> Result<Vec<TokenId>, StoreError> {
        let entry: &StoreIndexEntry = self.entry(id).ok_or(StoreError::DocNotFound(id))?;
        self.read_tokens(entry, start, len)
    }
}

/// In-memory token source for tests and synthetic pipelines.
#[derive(Debug, Default, Clone)]
pub struct InMemorySource {
    docs: HashMap<DocId, Vec<TokenId>>,
}

impl InMemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: DocId, tokens: Vec<TokenId>) {
        self.docs.insert(id, tokens);
    }

    /// Convenience: add a document of `len` arbitrary-but-deterministic
    /// tokens and return its id.
    pub fn add_doc(&mut self, id: u64, len: usize) -> DocId {
        let doc = DocId(id);
        let tokens = (0..len).map(|i| ((id as usize + i) % 251) as TokenId).collect();
        self.docs.insert(doc, tokens);
        doc
    }
}

impl TokenSource for InMemorySource {
    fn length_of(&self, id: DocId) -> Result<u64, StoreError> {
        self.docs
            .get(&id)
            .map(|t| t.len() as u64)
            .ok_or(StoreError::DocNotFound(id))
    }

    fn window(&self, id: DocId, start: u64, len: u64) -> Result<Vec<TokenId>, StoreError> {
        let tokens = self.docs.get(&id).ok_or(StoreError::DocNotFound(id))?;
        let start = start as usize;
        let len = len as usize;
        assert!(start + len <= tokens.len(), "window out of range");
        Ok(tokens[start..start + len].to_vec())
    }
}
