//! Indexed binary document store.
//!
//! Directory layout:
//! ```text
//! {dir}/
//! ├── tokens.bin    token blob, little-endian u32, documents back to back
//! ├── index.jsonl   one StoreIndexEntry per line, in blob order
//! └── meta.json     tokenizer id, vocab size, format version, stage split
//! ```
//!
//! Input is JSON-lines with a `"text"` field (tokenized here) or a
//! `"tokens"` field for pre-tokenized data. The schema is a stand-in for
//! whatever raw-corpus format feeds the pipeline. Documents get a stable
//! 64-bit content id (FNV-1a over `source ‖ 0x00 ‖ content bytes`), so
//! re-ingesting identical content is a no-op and stage-exclusivity checks
//! can compare ids across runs.
//!
//! Concurrency: single writer, any number of readers. Ingestion tokenizes
//! lines in parallel but appends in input order, so the blob bytes do not
//! depend on worker count.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64_parts;
use crate::rng::keyed_u64;
use crate::tokenizer::{self, TokenId, BYTE_TOKENIZER_ID, BYTE_VOCAB_SIZE, PAD};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: document has no tokens")]
    EmptyDocument { line: usize },
    #[error("line {line}: doc {doc}: token {token} exceeds vocab size {vocab}")]
    TokenOutOfRange { line: usize, doc: DocId, token: u64, vocab: u32 },
    #[error("line {line}: store tokenizer {tokenizer:?} cannot tokenize raw text; provide \"tokens\"")]
    TextNeedsByteTokenizer { line: usize, tokenizer: String },
    #[error("document {0} not found in store")]
    DocNotFound(DocId),
    #[error("corrupt index at line {line}: {reason}")]
    CorruptIndex { line: usize, reason: String },
    #[error("store meta: {0}")]
    BadMeta(String),
    #[error("store already has a stage split (fraction {num}/{den}, seed {seed}); refusing to re-split with different parameters")]
    StageSplitConflict { num: u64, den: u64, seed: u64 },
    #[error("invalid stage fraction {num}/{den}: must be within [0, 1]")]
    BadStageFraction { num: u64, den: u64 },
}

impl StoreError {
    fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StoreError {
        let path = path.into();
        move |source| StoreError::Io { path, source }
    }
}

/// Stable 64-bit content identity of a document.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DocId(pub u64);

impl DocId {
    pub fn from_text(source: &str, text: &str) -> DocId {
        DocId(fnv1a64_parts(&[source.as_bytes(), text.as_bytes()]))
    }

    pub fn from_tokens(source: &str, tokens: &[TokenId]) -> DocId {
        let mut bytes = Vec::with_capacity(tokens.len() * 4);
        for t in tokens {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        DocId(fnv1a64_parts(&[source.as_bytes(), &bytes]))
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<DocId> {
        if s.len() == 16 {
            u64::from_str_radix(s, 16).ok().map(DocId)
        } else {
            None
        }
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DocId({:016x})", self.0)
    }
}

impl Serialize for DocId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DocId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DocId::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid doc id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Unassigned,
    Stage1,
    Stage2,
}

#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: DocId,
    pub source: String,
    /// Original text when known. The store persists tokens only, so
    /// documents read back carry `None`; byte-tokenized text is recoverable
    /// through [`tokenizer::detokenize`].
    pub text: Option<String>,
    pub tokens: Vec<TokenId>,
    pub stage_tag: StageTag,
}

/// One line of `index.jsonl`. `offset` is the byte offset into `tokens.bin`
/// and `length` the token count; entries appear in blob order, so offsets
/// partition the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreIndexEntry {
    pub doc_id: DocId,
    pub offset: u64,
    pub length: u64,
    pub source: String,
    pub stage_tag: StageTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreMeta {
    pub tokenizer_id: String,
    pub vocab_size: u32,
    pub pad_id: Option<TokenId>,
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_split: Option<StageSplitRecord>,
}

/// Parameters of a document-level stage split, recorded so repeated runs
/// cannot silently re-partition the corpus with a different key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSplitRecord {
    pub stage2_num: u64,
    pub stage2_den: u64,
    pub seed: u64,
}

/// Tokenizer a store was created with.
#[derive(Debug, Clone)]
pub enum TokenizerSpec {
    /// The built-in byte tokenizer (vocab 259).
    ByteV1,
    /// Pre-tokenized data from an external tokenizer; only its id and
    /// vocab size are recorded.
    External { id: String, vocab_size: u32, pad_id: Option<TokenId> },
}

impl TokenizerSpec {
    fn to_meta(&self) -> StoreMeta {
        match self {
            TokenizerSpec::ByteV1 => StoreMeta {
                tokenizer_id: BYTE_TOKENIZER_ID.to_string(),
                vocab_size: BYTE_VOCAB_SIZE,
                pad_id: Some(PAD),
                format_version: STORE_FORMAT_VERSION,
                stage_split: None,
            },
            TokenizerSpec::External { id, vocab_size, pad_id } => StoreMeta {
                tokenizer_id: id.clone(),
                vocab_size: *vocab_size,
                pad_id: *pad_id,
                format_version: STORE_FORMAT_VERSION,
                stage_split: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub duplicates: usize,
    pub tokens_added: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageCounts {
    pub stage1: usize,
    pub stage2: usize,
}

pub struct Store {
    dir: PathBuf,
    meta: StoreMeta,
    index: Vec<StoreIndexEntry>,
    by_id: HashMap<DocId, usize>,
    blob: File,
    blob_len: u64,
}

impl Store {
    pub fn create(dir: &Path, tokenizer: TokenizerSpec) -> Result<Store, StoreError> {
        fs::create_dir_all(dir).map_err(StoreError::io(dir))?;
        let meta = tokenizer.to_meta();
        write_json_atomic(&dir.join("meta.json"), &meta)?;
        File::create(dir.join("index.jsonl")).map_err(StoreError::io(dir.join("index.jsonl")))?;
        let blob = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(true)
            .open(dir.join("tokens.bin"))
            .map_err(StoreError::io(dir.join("tokens.bin")))?;
        Ok(Store {
            dir: dir.to_path_buf(),
            meta,
            index: Vec::new(),
            by_id: HashMap::new(),
            blob,
            blob_len: 0,
        })
    }

    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        let meta_path = dir.join("meta.json");
        let meta_file = File::open(&meta_path).map_err(StoreError::io(&meta_path))?;
        let meta: StoreMeta = serde_json::from_reader(BufReader::new(meta_file))
            .map_err(|e| StoreError::BadMeta(e.to_string()))?;
        if meta.format_version != STORE_FORMAT_VERSION {
            return Err(StoreError::BadMeta(format!(
                "format_version {} unsupported (expected {STORE_FORMAT_VERSION})",
                meta.format_version
            )));
        }

        let index_path = dir.join("index.jsonl");
        let index_file = File::open(&index_path).map_err(StoreError::io(&index_path))?;
        let mut index = Vec::new();
        let mut by_id = HashMap::new();
        for (i, line) in BufReader::new(index_file).lines().enumerate() {
            let line = line.map_err(StoreError::io(&index_path))?;
            let entry: StoreIndexEntry =
                serde_json::from_str(&line).map_err(|e| StoreError::CorruptIndex {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            by_id.insert(entry.doc_id, index.len());
            index.push(entry);
        }

        let blob_path = dir.join("tokens.bin");
        let blob = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&blob_path)
            .map_err(StoreError::io(&blob_path))?;
        let blob_len = blob.metadata().map_err(StoreError::io(&blob_path))?.len();

        let store = Store { dir: dir.to_path_buf(), meta, index, by_id, blob, blob_len };
        store.validate()?;
        Ok(store)
    }

    pub fn open_or_create(dir: &Path, tokenizer: TokenizerSpec) -> Result<Store, StoreError> {
        if dir.join("meta.json").exists() {
            Store::open(dir)
        } else {
            Store::create(dir, tokenizer)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn entries(&self) -> &[StoreIndexEntry] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn entry(&self, id: DocId) -> Option<&StoreIndexEntry> {
        self.by_id.get(&id).map(|&i| &self.index[i])
    }

    /// Index entries for one source label, in blob order.
    pub fn entries_for_source<'a>(
        &'a self,
        source: &'a str,
    ) -> impl Iterator<Item = &'a StoreIndexEntry> + 'a {
        self.index.iter().filter(move |e| e.source == source)
    }

    /// Ingest a JSON-lines file. Each line must carry `"text"` or
    /// `"tokens"` (not both); other fields are ignored. The whole file is
    /// validated before anything is appended, so a malformed line leaves
    /// the store untouched.
    pub fn ingest_jsonl(&mut self, path: &Path, source: &str) -> Result<IngestReport, StoreError> {
        let file = File::open(path).map_err(StoreError::io(path))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(StoreError::io(path))?;

        let byte_tokenizer = self.meta.tokenizer_id == BYTE_TOKENIZER_ID;
        let vocab = self.meta.vocab_size;
        let tokenizer_id = self.meta.tokenizer_id.clone();
        let source_owned = source.to_string();

        // Parse + tokenize in parallel; report the earliest failing line.
        let mut parsed: Vec<(usize, Result<(DocId, Vec<TokenId>), StoreError>)> = lines
            .par_iter()
            .enumerate()
            .map(|(i, raw)| {
                let line = i + 1;
                (line, parse_line(raw, line, &source_owned, byte_tokenizer, &tokenizer_id, vocab))
            })
            .collect();
        parsed.sort_by_key(|(line, _)| *line);
        let mut docs = Vec::with_capacity(parsed.len());
        for (_, res) in parsed {
            docs.push(res?);
        }

        // Append in input order.
        let mut report = IngestReport::default();
        let mut seen_in_batch: HashMap<DocId, ()> = HashMap::new();
        let index_path = self.dir.join("index.jsonl");
        let index_file = OpenOptions::new()
            .append(true)
            .open(&index_path)
            .map_err(StoreError::io(&index_path))?;
        let mut index_writer = BufWriter::new(index_file);
        let mut blob_writer = BufWriter::new(&self.blob);
        for (doc_id, tokens) in docs {
            if self.by_id.contains_key(&doc_id) || seen_in_batch.contains_key(&doc_id) {
                report.duplicates += 1;
                continue;
            }
            seen_in_batch.insert(doc_id, ());
            let mut bytes = Vec::with_capacity(tokens.len() * 4);
            for t in &tokens {
                bytes.extend_from_slice(&t.to_le_bytes());
            }
            blob_writer
                .write_all(&bytes)
                .map_err(StoreError::io(self.dir.join("tokens.bin")))?;
            let entry = StoreIndexEntry {
                doc_id,
                offset: self.blob_len,
                length: tokens.len() as u64,
                source: source.to_string(),
                stage_tag: StageTag::Unassigned,
            };
            let line = serde_json::to_string(&entry).expect("index entry serializes");
            index_writer
                .write_all(line.as_bytes())
                .and_then(|_| index_writer.write_all(b"\n"))
                .map_err(StoreError::io(&index_path))?;
            self.blob_len += bytes.len() as u64;
            self.by_id.insert(doc_id, self.index.len());
            self.index.push(entry);
            report.ingested += 1;
            report.tokens_added += tokens.len() as u64;
        }
        blob_writer.flush().map_err(StoreError::io(self.dir.join("tokens.bin")))?;
        index_writer.flush().map_err(StoreError::io(&index_path))?;
        Ok(report)
    }

    pub fn get_document(&self, id: DocId) -> Result<Document, StoreError> {
        let entry = self.entry(id).ok_or(StoreError::DocNotFound(id))?;
        let tokens = self.read_tokens(entry, 0, entry.length)?;
        Ok(Document {
            doc_id: entry.doc_id,
            source: entry.source.clone(),
            text: None,
            tokens,
            stage_tag: entry.stage_tag,
        })
    }

    /// Random-access read of `len` tokens starting `start` tokens into the
    /// document. The backing file handle is shared; reads use positional I/O
    /// so concurrent readers never race on a seek cursor.
    pub fn read_tokens(
        &self,
        entry: &StoreIndexEntry,
        start: u64,
        len: u64,
    ) -> Result<Vec<TokenId>, StoreError> {
        assert!(
            start + len <= entry.length,
            "token window [{start}, {}) exceeds document length {}",
            start + len,
            entry.length
        );
        let mut bytes = vec![0u8; (len * 4) as usize];
        self.blob
            .read_exact_at(&mut bytes, entry.offset + start * 4)
            .map_err(StoreError::io(self.dir.join("tokens.bin")))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Integrity check: offsets strictly increasing and contiguous,
    /// lengths positive, token lengths summing to the blob size.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut expected_offset = 0u64;
        for (i, entry) in self.index.iter().enumerate() {
            if entry.length == 0 {
                return Err(StoreError::CorruptIndex {
                    line: i + 1,
                    reason: "zero token_length".into(),
                });
            }
            if entry.offset != expected_offset {
                return Err(StoreError::CorruptIndex {
                    line: i + 1,
                    reason: format!(
                        "offset {} does not continue the blob (expected {expected_offset})",
                        entry.offset
                    ),
                });
            }
            expected_offset += entry.length * 4;
        }
        if expected_offset != self.blob_len {
            return Err(StoreError::CorruptIndex {
                line: self.index.len(),
                reason: format!(
                    "index covers {expected_offset} bytes but blob has {}",
                    self.blob_len
                ),
            });
        }
        Ok(())
    }

    /// Deterministic hash split of every document into stage 1 or stage 2.
    /// Membership is keyed by `(seed, doc_id)` alone, so adding documents
    /// later never moves existing ones. Re-splitting with identical
    /// parameters is a no-op; different parameters are refused because they
    /// would break the exclusivity guarantee of earlier runs.
    pub fn assign_stages(
        &mut self,
        stage2_num: u64,
        stage2_den: u64,
        seed: u64,
    ) -> Result<StageCounts, StoreError> {
        if stage2_den == 0 || stage2_num > stage2_den {
            return Err(StoreError::BadStageFraction { num: stage2_num, den: stage2_den });
        }
        let record = StageSplitRecord { stage2_num, stage2_den, seed };
        if let Some(existing) = self.meta.stage_split {
            if existing != record {
                return Err(StoreError::StageSplitConflict {
                    num: existing.stage2_num,
                    den: existing.stage2_den,
                    seed: existing.seed,
                });
            }
        }

        let mut counts = StageCounts { stage1: 0, stage2: 0 };
        for entry in &mut self.index {
            let tag = split_stage_tag(entry.doc_id, stage2_num, stage2_den, seed);
            entry.stage_tag = tag;
            match tag {
                StageTag::Stage1 => counts.stage1 += 1,
                StageTag::Stage2 => counts.stage2 += 1,
                StageTag::Unassigned => unreachable!("split always assigns"),
            }
        }
        self.meta.stage_split = Some(record);
        self.rewrite_index()?;
        write_json_atomic(&self.dir.join("meta.json"), &self.meta)?;
        Ok(counts)
    }

    fn rewrite_index(&self) -> Result<(), StoreError> {
        let path = self.dir.join("index.jsonl");
        let tmp = self.dir.join("index.jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(StoreError::io(&tmp))?;
            let mut w = BufWriter::new(file);
            for entry in &self.index {
                let line = serde_json::to_string(entry).expect("index entry serializes");
                w.write_all(line.as_bytes())
                    .and_then(|_| w.write_all(b"\n"))
                    .map_err(StoreError::io(&tmp))?;
            }
            w.flush().map_err(StoreError::io(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(StoreError::io(&path))?;
        Ok(())
    }
}

/// Pure form of the stage split: partitions arbitrary ids without a store.
/// A document lands in stage 2 iff its keyed hash, read as a fraction of
/// 2^64, falls below `num/den`.
pub fn split_stages(
    doc_ids: &[DocId],
    stage2_num: u64,
    stage2_den: u64,
    seed: u64,
) -> (Vec<DocId>, Vec<DocId>) {
    let mut stage1 = Vec::new();
    let mut stage2 = Vec::new();
    for &id in doc_ids {
        match split_stage_tag(id, stage2_num, stage2_den, seed) {
            StageTag::Stage2 => stage2.push(id),
            _ => stage1.push(id),
        }
    }
    (stage1, stage2)
}

fn split_stage_tag(id: DocId, num: u64, den: u64, seed: u64) -> StageTag {
    let h = keyed_u64(seed, "store/stage_split", &[id.0]);
    // h < num/den * 2^64, computed exactly in u128.
    let threshold = (u128::from(num) << 64) / u128::from(den);
    if u128::from(h) < threshold {
        StageTag::Stage2
    } else {
        StageTag::Stage1
    }
}

fn parse_line(
    raw: &str,
    line: usize,
    source: &str,
    byte_tokenizer: bool,
    tokenizer_id: &str,
    vocab: u32,
) -> Result<(DocId, Vec<TokenId>), StoreError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| StoreError::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| StoreError::MalformedLine {
        line,
        reason: "not a JSON object".into(),
    })?;
    match (obj.get("text"), obj.get("tokens")) {
        (Some(_), Some(_)) => Err(StoreError::MalformedLine {
            line,
            reason: "both \"text\" and \"tokens\" present".into(),
        }),
        (None, None) => Err(StoreError::MalformedLine {
            line,
            reason: "neither \"text\" nor \"tokens\" present".into(),
        }),
        (Some(text), None) => {
            let text = text.as_str().ok_or_else(|| StoreError::MalformedLine {
                line,
                reason: "\"text\" is not a string".into(),
            })?;
            if !byte_tokenizer {
                return Err(StoreError::TextNeedsByteTokenizer {
                    line,
                    tokenizer: tokenizer_id.to_string(),
                });
            }
            let tokens = tokenizer::tokenize(text);
            if tokens.is_empty() {
                return Err(StoreError::EmptyDocument { line });
            }
            Ok((DocId::from_text(source, text), tokens))
        }
        (None, Some(tokens)) => {
            let arr = tokens.as_array().ok_or_else(|| StoreError::MalformedLine {
                line,
                reason: "\"tokens\" is not an array".into(),
            })?;
            if arr.is_empty() {
                return Err(StoreError::EmptyDocument { line });
            }
            let mut out = Vec::with_capacity(arr.len());
            for v in arr {
                let t = v.as_u64().ok_or_else(|| StoreError::MalformedLine {
                    line,
                    reason: format!("token {v} is not a non-negative integer"),
                })?;
                out.push(t);
            }
            let doc = DocId::from_tokens(
                source,
                &out.iter().map(|&t| t as u32).collect::<Vec<_>>(),
            );
            for &t in &out {
                if t >= u64::from(vocab) {
                    return Err(StoreError::TokenOutOfRange { line, doc, token: t, vocab });
                }
            }
            Ok((doc, out.into_iter().map(|t| t as u32).collect()))
        }
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let tmp = path.with_extension("json.tmp");
    let data = serde_json::to_vec_pretty(value).expect("meta serializes");
    fs::write(&tmp, data).map_err(StoreError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(StoreError::io(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn jsonl(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn ingest_counts_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(
            dir.path(),
            "in.jsonl",
            &[r#"{"text":"one"}"#, r#"{"text":"two"}"#, r#"{"text":"three"}"#],
        );
        let report = store.ingest_jsonl(&input, "books").unwrap();
        assert_eq!(report.ingested, 3);
        assert_eq!(report.duplicates, 0);
    }

    #[test]
    fn reingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(
            dir.path(),
            "in.jsonl",
            &[r#"{"text":"one"}"#, r#"{"text":"two"}"#, r#"{"text":"three"}"#],
        );
        store.ingest_jsonl(&input, "books").unwrap();
        let second = store.ingest_jsonl(&input, "books").unwrap();
        assert_eq!(second.ingested, 0);
        assert_eq!(second.duplicates, 3);
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn pretokenized_line_round_trips_through_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"tokens":[0,1,2]}"#]);
        let report = store.ingest_jsonl(&input, "pre").unwrap();
        assert_eq!(report.ingested, 1);
        let entry = &store.entries()[0];
        assert_eq!(entry.length, 3);
        let doc = store.get_document(entry.doc_id).unwrap();
        assert_eq!(doc.tokens, vec![0, 1, 2]);
    }

    #[test]
    fn token_over_vocab_is_rejected_naming_doc() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"tokens":[0,259]}"#]);
        let err = store.ingest_jsonl(&input, "pre").unwrap_err();
        assert!(matches!(err, StoreError::TokenOutOfRange { token: 259, vocab: 259, .. }));
        assert_eq!(store.len(), 0, "failed ingest must not append");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"text":"ok"}"#, "{not json"]);
        let err = store.ingest_jsonl(&input, "books").unwrap_err();
        assert!(matches!(err, StoreError::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn get_document_round_trip_and_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"text":"AB"}"#]);
        store.ingest_jsonl(&input, "books").unwrap();
        let id = store.entries()[0].doc_id;
        assert_eq!(store.get_document(id).unwrap().tokens, vec![65, 66]);
        let missing = DocId(0xdead_beef);
        assert!(matches!(store.get_document(missing), Err(StoreError::DocNotFound(_))));
    }

    #[test]
    fn reopen_preserves_bytes_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> =
            (0..100).map(|i| format!(r#"{{"text":"document number {i} with some text"}}"#)).collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let input = jsonl(dir.path(), "in.jsonl", &refs);

        let store_dir = dir.path().join("store");
        let mut store = Store::create(&store_dir, TokenizerSpec::ByteV1).unwrap();
        store.ingest_jsonl(&input, "books").unwrap();
        let ids: Vec<DocId> = store.entries().iter().map(|e| e.doc_id).collect();
        drop(store);

        let reopened = Store::open(&store_dir).unwrap();
        reopened.validate().unwrap();
        let ids2: Vec<DocId> = reopened.entries().iter().map(|e| e.doc_id).collect();
        assert_eq!(ids, ids2);
        for entry in reopened.entries() {
            let doc = reopened.get_document(entry.doc_id).unwrap();
            assert_eq!(doc.tokens.len() as u64, entry.length);
        }
    }

    #[test]
    fn deterministic_ids_across_stores() {
        let dir = tempfile::tempdir().unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"text":"same content"}"#]);
        let mut a = Store::create(&dir.path().join("a"), TokenizerSpec::ByteV1).unwrap();
        let mut b = Store::create(&dir.path().join("b"), TokenizerSpec::ByteV1).unwrap();
        a.ingest_jsonl(&input, "books").unwrap();
        b.ingest_jsonl(&input, "books").unwrap();
        assert_eq!(a.entries()[0].doc_id, b.entries()[0].doc_id);
        // Source participates in identity.
        let mut c = Store::create(&dir.path().join("c"), TokenizerSpec::ByteV1).unwrap();
        c.ingest_jsonl(&input, "web").unwrap();
        assert_ne!(a.entries()[0].doc_id, c.entries()[0].doc_id);
    }

    #[test]
    fn stage_split_fractions_zero_and_one() {
        let ids: Vec<DocId> = (0..1000u64).map(DocId).collect();
        let (s1, s2) = split_stages(&ids, 0, 1, 42);
        assert_eq!(s2.len(), 0);
        assert_eq!(s1.len(), 1000);
        let (s1, s2) = split_stages(&ids, 1, 1, 42);
        assert_eq!(s1.len(), 0);
        assert_eq!(s2.len(), 1000);
    }

    #[test]
    fn stage_split_is_disjoint_and_near_fraction() {
        let ids: Vec<DocId> = (0..100_000u64).map(|i| DocId(i.wrapping_mul(0x9e37_79b9))).collect();
        let (s1, s2) = split_stages(&ids, 1, 2, 7);
        assert_eq!(s1.len() + s2.len(), ids.len());
        let share = s2.len() as f64 / ids.len() as f64;
        assert!((0.48..=0.52).contains(&share), "stage2 share {share}");
        let set1: std::collections::HashSet<_> = s1.iter().collect();
        assert!(s2.iter().all(|id| !set1.contains(id)));
    }

    #[test]
    fn assign_stages_refuses_conflicting_resplit() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path(), TokenizerSpec::ByteV1).unwrap();
        let input = jsonl(dir.path(), "in.jsonl", &[r#"{"text":"a doc"}"#]);
        store.ingest_jsonl(&input, "books").unwrap();
        store.assign_stages(1, 2, 7).unwrap();
        // Same parameters: fine. Different: refused.
        store.assign_stages(1, 2, 7).unwrap();
        assert!(matches!(
            store.assign_stages(1, 2, 8),
            Err(StoreError::StageSplitConflict { .. })
        ));
    }
}
