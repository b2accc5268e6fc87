//! Packed dataset directory format.
//!
//! ```text
//! {dir}/
//! ├── sequences.bin        tokens, little-endian u32, sequences back to back
//! ├── sequences.idx.jsonl  per sequence: byte offset, length, segment list
//! ├── boundaries.jsonl     per sequence: cumulative attention-group ends
//! └── stats.json           packing statistics
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PackError, PackStats, PackedSequence, SegmentRef};
use crate::tokenizer::TokenId;

/// One line of `sequences.idx.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceIndexEntry {
    pub byte_offset: u64,
    pub length: u64,
    pub segments: Vec<SegmentRef>,
}

pub struct PackedDatasetWriter {
    dir: PathBuf,
    bin: BufWriter<File>,
    idx: BufWriter<File>,
    boundaries: BufWriter<File>,
    byte_offset: u64,
    stats: PackStats,
}

impl PackedDatasetWriter {
    pub fn create(dir: &Path) -> Result<PackedDatasetWriter, PackError> {
        std::fs::create_dir_all(dir).map_err(PackError::io(dir))?;
        let open = |name: &str| -> Result<BufWriter<File>, PackError> {
            let path = dir.join(name);
            Ok(BufWriter::new(File::create(&path).map_err(PackError::io(path))?))
        };
        Ok(PackedDatasetWriter {
            dir: dir.to_path_buf(),
            bin: open("sequences.bin")?,
            idx: open("sequences.idx.jsonl")?,
            boundaries: open("boundaries.jsonl")?,
            byte_offset: 0,
            stats: PackStats::default(),
        })
    }

    pub fn write_sequence(&mut self, seq: &PackedSequence) -> Result<(), PackError> {
        seq.validate()?;
        let mut bytes = Vec::with_capacity(seq.tokens.len() * 4);
        for t in &seq.tokens {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        self.bin
            .write_all(&bytes)
            .map_err(PackError::io(self.dir.join("sequences.bin")))?;

        let entry = SequenceIndexEntry {
            byte_offset: self.byte_offset,
            length: seq.tokens.len() as u64,
            segments: seq.segments.clone(),
        };
        let line = serde_json::to_string(&entry).expect("index entry serializes");
        self.idx
            .write_all(line.as_bytes())
            .and_then(|_| self.idx.write_all(b"\n"))
            .map_err(PackError::io(self.dir.join("sequences.idx.jsonl")))?;

        let ends = serde_json::to_string(&seq.group_ends()).expect("ends serialize");
        self.boundaries
            .write_all(ends.as_bytes())
            .and_then(|_| self.boundaries.write_all(b"\n"))
            .map_err(PackError::io(self.dir.join("boundaries.jsonl")))?;

        self.byte_offset += bytes.len() as u64;
        Ok(())
    }

    pub fn write_all(&mut self, sequences: &[PackedSequence]) -> Result<(), PackError> {
        for seq in sequences {
            self.write_sequence(seq)?;
        }
        Ok(())
    }

    /// Fold a packer's stats into the dataset's `stats.json`.
    pub fn absorb_stats(&mut self, stats: &PackStats) {
        self.stats.absorb(stats);
    }

    pub fn finish(mut self) -> Result<PackStats, PackError> {
        self.bin.flush().map_err(PackError::io(self.dir.join("sequences.bin")))?;
        self.idx.flush().map_err(PackError::io(self.dir.join("sequences.idx.jsonl")))?;
        self.boundaries.flush().map_err(PackError::io(self.dir.join("boundaries.jsonl")))?;
        let stats_path = self.dir.join("stats.json");
        let data = serde_json::to_vec_pretty(&self.stats).expect("stats serialize");
        std::fs::write(&stats_path, data).map_err(PackError::io(stats_path))?;
        Ok(self.stats)
    }
}

pub struct PackedDataset {
    dir: PathBuf,
    entries: Vec<SequenceIndexEntry>,
    bin: File,
    bin_len: u64,
    stats: Option<PackStats>,
}

impl PackedDataset {
    pub fn open(dir: &Path) -> Result<PackedDataset, PackError> {
        let idx_path = dir.join("sequences.idx.jsonl");
        let idx_file = File::open(&idx_path).map_err(PackError::io(&idx_path))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(idx_file).lines().enumerate() {
            let line = line.map_err(PackError::io(&idx_path))?;
            let entry: SequenceIndexEntry =
                serde_json::from_str(&line).map_err(|e| PackError::CorruptIndex {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push(entry);
        }
        let bin_path = dir.join("sequences.bin");
        let bin = File::open(&bin_path).map_err(PackError::io(&bin_path))?;
        let bin_len = bin.metadata().map_err(PackError::io(&bin_path))?.len();
        let stats = match File::open(dir.join("stats.json")) {
            Ok(f) => serde_json::from_reader(BufReader::new(f)).ok(),
            Err(_) => None,
        };
        Ok(PackedDataset { dir: dir.to_path_buf(), entries, bin, bin_len, stats })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SequenceIndexEntry] {
        &self.entries
    }

    pub fn stats(&self) -> Option<&PackStats> {
        self.stats.as_ref()
    }

    pub fn tokens(&self, index: usize) -> Result<Vec<TokenId>, PackError> {
        let entry = &self.entries[index];
        let mut bytes = vec![0u8; (entry.length * 4) as usize];
        self.bin
            .read_exact_at(&mut bytes, entry.byte_offset)
            .map_err(PackError::io(self.dir.join("sequences.bin")))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn sequence(&self, index: usize) -> Result<PackedSequence, PackError> {
        Ok(PackedSequence {
            tokens: self.tokens(index)?,
            segments: self.entries[index].segments.clone(),
        })
    }

    /// Integrity check: entries must tile `sequences.bin` exactly and each
    /// segment list must cover its sequence.
    pub fn validate(&self) -> Result<(), PackError> {
        let mut expected = 0u64;
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.byte_offset != expected {
                return Err(PackError::CorruptIndex {
                    line: i + 1,
                    reason: format!(
                        "byte_offset {} does not continue the blob (expected {expected})",
                        entry.byte_offset
                    ),
                });
            }
            let covered: u64 = entry.segments.iter().map(|s| s.length).sum();
            if covered != entry.length {
                return Err(PackError::CorruptIndex {
                    line: i + 1,
                    reason: format!(
                        "segments cover {covered} tokens but sequence length is {}",
                        entry.length
                    ),
                });
            }
            let seq = PackedSequence {
                tokens: vec![0; entry.length as usize],
                segments: entry.segments.clone(),
            };
            seq.validate().map_err(|e| PackError::CorruptIndex {
                line: i + 1,
                reason: e.to_string(),
            })?;
            expected += entry.length * 4;
        }
        if expected != self.bin_len {
            return Err(PackError::CorruptIndex {
                line: self.entries.len(),
                reason: format!("index covers {expected} bytes but blob has {}", self.bin_len),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::{pack_short_in_order, InMemorySource};

    fn sample_sequences() -> Vec<PackedSequence> {
        let mut src = InMemorySource::new();
        let ids: Vec<_> = (0..10).map(|i| src.add_doc(i + 1, 5 + i as usize)).collect();
        pack_short_in_order(&src, &ids, 16).unwrap().sequences
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sequences = sample_sequences();
        let mut w = PackedDatasetWriter::create(dir.path()).unwrap();
        w.write_all(&sequences).unwrap();
        w.finish().unwrap();

        let ds = PackedDataset::open(dir.path()).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.len(), sequences.len());
        for (i, seq) in sequences.iter().enumerate() {
            assert_eq!(&ds.sequence(i).unwrap(), seq);
        }
    }

    #[test]
    fn corrupt_index_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let sequences = sample_sequences();
        let mut w = PackedDatasetWriter::create(dir.path()).unwrap();
        w.write_all(&sequences).unwrap();
        w.finish().unwrap();

        // Flip one byte in the second index line.
        let idx_path = dir.path().join("sequences.idx.jsonl");
        let content = std::fs::read_to_string(&idx_path).unwrap();
        let mut lines: Vec<String> = content.lines().map(String::from).collect();
        lines[1] = lines[1].replacen("byte_offset", "byte_offsXt", 1);
        std::fs::write(&idx_path, lines.join("\n") + "\n").unwrap();

        let err = match PackedDataset::open(dir.path()) {
            Err(e) => e,
            Ok(ds) => ds.validate().unwrap_err(),
        };
        match err {
            PackError::CorruptIndex { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn boundary_lines_match_group_ends() {
        let dir = tempfile::tempdir().unwrap();
        let sequences = sample_sequences();
        let mut w = PackedDatasetWriter::create(dir.path()).unwrap();
        w.write_all(&sequences).unwrap();
        w.finish().unwrap();

        let text = std::fs::read_to_string(dir.path().join("boundaries.jsonl")).unwrap();
        for (line, seq) in text.lines().zip(&sequences) {
            let ends: Vec<u64> = serde_json::from_str(line).unwrap();
            assert_eq!(ends, seq.group_ends());
            assert_eq!(*ends.last().unwrap(), seq.len() as u64);
        }
    }
}
