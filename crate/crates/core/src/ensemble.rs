//! Checkpoint averaging across seed runs.
//!
//! File format (`.ckpt`):
//! ```text
//! [u64 LE]   header length in bytes
//! [header]   JSON: {format_version, tensors: name -> {dtype, shape,
//!            offset, nbytes}, metadata}
//! [payload]  raw little-endian f32 tensor data, offsets relative to the
//!            payload start
//! ```
//! Tensors are laid out in name-sorted order and the header is plain JSON,
//! so the format is auditable with a hex dump and readable from any
//! language.
//!
//! Averaging accumulates in f64 and, per element, sums the weighted terms
//! in sorted pairwise order. That makes the result exactly invariant to
//! input permutation rather than merely close.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CKPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("checkpoint i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("tensor {tensor}: {reason}")]
    BadTensor { tensor: String, reason: String },
    #[error("non-finite value in tensor {tensor} at index {index}")]
    NonFinite { tensor: String, index: usize },
    #[error("checkpoints differ structurally:\n{}", details.join("\n"))]
    StructuralDiff { details: Vec<String> },
    #[error("need at least 2 checkpoints to ensemble (got {0})")]
    TooFewInputs(usize),
    #[error("bad ensemble weights: {0}")]
    BadWeights(String),
}

impl CkptError {
    fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CkptError {
        let path = path.into();
        move |source| CkptError::Io { path, source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CkptMetadata {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    /// Run ids of the constituents, set on merged checkpoints.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_from: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: CkptMetadata,
}

#[derive(Serialize, Deserialize)]
struct HeaderTensor {
    dtype: String,
    shape: Vec<u64>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tensors: BTreeMap<String, HeaderTensor>,
    metadata: CkptMetadata,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CkptError> {
    let mut header = Header {
        format_version: CKPT_FORMAT_VERSION,
        tensors: BTreeMap::new(),
        metadata: ckpt.metadata.clone(),
    };
    let mut offset = 0u64;
    for (name, tensor) in &ckpt.tensors {
        let expected = tensor.element_count();
        if tensor.data.len() as u64 != expected {
            return Err(CkptError::BadTensor {
                tensor: name.clone(),
                reason: format!("shape {:?} wants {expected} values, data has {}", tensor.shape, tensor.data.len()),
            });
        }
        let nbytes = expected * 4;
        header.tensors.insert(
            name.clone(),
            HeaderTensor { dtype: "f32".into(), shape: tensor.shape.clone(), offset, nbytes },
        );
        offset += nbytes;
    }

    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let file = File::create(path).map_err(CkptError::io(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .and_then(|_| w.write_all(&header_bytes))
        .map_err(CkptError::io(path))?;
    for tensor in ckpt.tensors.values() {
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes()).map_err(CkptError::io(path))?;
        }
    }
    w.flush().map_err(CkptError::io(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, allow_nonfinite: bool) -> Result<Checkpoint, CkptError> {
    let file = File::open(path).map_err(CkptError::io(path))?;
    let mut r = BufReader::new(file);

    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(CkptError::io(path))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(CkptError::io(path))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CkptError::BadHeader(e.to_string()))?;
    if header.format_version != CKPT_FORMAT_VERSION {
        return Err(CkptError::BadHeader(format!(
            "format_version {} unsupported (expected {CKPT_FORMAT_VERSION})",
            header.format_version
        )));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(CkptError::io(path))?;

    let mut tensors = BTreeMap::new();
    for (name, ht) in header.tensors {
        if ht.dtype != "f32" {
            return Err(CkptError::BadTensor {
                tensor: name,
                reason: format!("unsupported dtype {:?}", ht.dtype),
            });
        }
        let expected: u64 = ht.shape.iter().product::<u64>() * 4;
        if ht.nbytes != expected {
            return Err(CkptError::BadTensor {
                tensor: name,
                reason: format!("nbytes {} does not match shape {:?}", ht.nbytes, ht.shape),
            });
        }
        let start = ht.offset as usize;
        let end = start + ht.nbytes as usize;
        if end > payload.len() {
            return Err(CkptError::BadTensor {
                tensor: name,
                reason: format!("data range [{start}, {end}) exceeds payload of {}", payload.len()),
            });
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if !allow_nonfinite {
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(CkptError::NonFinite { tensor: name, index });
            }
        }
        tensors.insert(name, Tensor { shape: ht.shape, data });
    }

    Ok(Checkpoint { tensors, metadata: header.metadata })
}

/// Elementwise weighted mean of checkpoints with identical structure.
///
/// Weights default to uniform and are normalized to sum to 1.
/// Accumulation runs in f64; per element the weighted terms are summed in
/// sorted pairwise order, so permuting the inputs (with their weights)
/// reproduces the output bit for bit.
pub fn average_checkpoints(
    inputs: &[Checkpoint],
    weights: Option<&[f64]>,
) -> Result<Checkpoint, CkptError> {
    if inputs.len() < 2 {
        return Err(CkptError::TooFewInputs(inputs.len()));
    }
    let weights = normalized_weights(inputs.len(), weights)?;

    let reference = &inputs[0];
    let mut structural = Vec::new();
    for (i, other) in inputs.iter().enumerate().skip(1) {
        diff_structure(reference, other, &format!("input 0 vs input {i}"), &mut structural);
    }
    if !structural.is_empty() {
        return Err(CkptError::StructuralDiff { details: structural });
    }

    let mut tensors = BTreeMap::new();
    for (name, ref_tensor) in &reference.tensors {
        let n = ref_tensor.data.len();
        let mut data = Vec::with_capacity(n);
        let mut terms = vec![0f64; inputs.len()];
        for e in 0..n {
            for (t, (input, w)) in inputs.iter().zip(&weights).enumerate() {
                terms[t] = f64::from(input.tensors[name].data[e]) * w;
            }
            terms.sort_by(|a, b| a.total_cmp(b));
            data.push(pairwise_sum(&terms) as f32);
        }
        data.shrink_to_fit();
        tensors.insert(name.clone(), Tensor { shape: ref_tensor.shape.clone(), data });
    }

    let merged_from = inputs.iter().map(|c| c.metadata.run_id.clone()).collect();
    Ok(Checkpoint {
        tensors,
        metadata: CkptMetadata {
            run_id: "merged".into(),
            seed: 0,
            step: inputs.iter().map(|c| c.metadata.step).max().unwrap_or(0),
            merged_from,
        },
    })
}

fn normalized_weights(count: usize, weights: Option<&[f64]>) -> Result<Vec<f64>, CkptError> {
    match weights {
        None => Ok(vec![1.0 / count as f64; count]),
        Some(w) => {
            if w.len() != count {
                return Err(CkptError::BadWeights(format!(
                    "{} weights for {count} checkpoints",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(CkptError::BadWeights("weights must be finite and >= 0".into()));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(CkptError::BadWeights("weights must not all be zero".into()));
            }
            Ok(w.iter().map(|x| x / total).collect())
        }
    }
}

fn pairwise_sum(terms: &[f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
        }
    }
}

/// Structural comparison: tensor names and shapes.
pub fn diff_structure(
    a: &Checkpoint,
    b: &Checkpoint,
    label: &str,
    out: &mut Vec<String>,
) {
    for (name, ta) in &a.tensors {
        match b.tensors.get(name) {
            None => out.push(format!("{label}: tensor {name} missing from second")),
            Some(tb) if tb.shape != ta.shape => out.push(format!(
                "{label}: tensor {name} shape {:?} vs {:?}",
                ta.shape, tb.shape
            )),
            Some(_) => {}
        }
    }
    for name in b.tensors.keys() {
        if !a.tensors.contains_key(name) {
            out.push(format!("{label}: tensor {name} missing from first"));
        }
    }
}

/// Maximum absolute elementwise difference across all tensors.
/// Requires structural equality.
pub fn max_abs_diff(a: &Checkpoint, b: &Checkpoint) -> Result<f64, CkptError> {
    let mut structural = Vec::new();
    diff_structure(a, b, "diff", &mut structural);
    if !structural.is_empty() {
        return Err(CkptError::StructuralDiff { details: structural });
    }
    let mut max = 0f64;
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        for (x, y) in ta.data.iter().zip(&tb.data) {
            max = max.max((f64::from(*x) - f64::from(*y)).abs());
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(run_id: &str, values: &[(&str, Vec<f32>)]) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (name, data) in values {
            tensors.insert(
                name.to_string(),
                Tensor { shape: vec![data.len() as u64], data: data.clone() },
            );
        }
        Checkpoint {
            tensors,
            metadata: CkptMetadata { run_id: run_id.into(), seed: 1, step: 100, merged_from: vec![] },
        }
    }

    fn ulp_distance(a: f32, b: f32) -> u32 {
        let ia = a.to_bits() as i64;
        let ib = b.to_bits() as i64;
        (ia - ib).unsigned_abs() as u32
    }

    #[test]
    fn hand_arithmetic_mean() {
        let a = ckpt("a", &[("t", vec![0.0, 2.0])]);
        let b = ckpt("b", &[("t", vec![2.0, 0.0])]);
        let merged = average_checkpoints(&[a, b], None).unwrap();
        assert_eq!(merged.tensors["t"].data, vec![1.0, 1.0]);
        assert_eq!(merged.metadata.merged_from, vec!["a", "b"]);
    }

    #[test]
    fn mean_of_equals_is_identity_within_one_ulp() {
        let values: Vec<f32> = (0..1000).map(|i| (i as f32) * 0.37 - 185.0).collect();
        let a = ckpt("a", &[("t", values.clone())]);
        let b = ckpt("b", &[("t", values.clone())]);
        let c = ckpt("c", &[("t", values.clone())]);
        let merged = average_checkpoints(&[a, b, c], None).unwrap();
        for (got, want) in merged.tensors["t"].data.iter().zip(&values) {
            assert!(ulp_distance(*got, *want) <= 1, "{got} vs {want}");
        }
    }

    #[test]
    fn degenerate_weights_select_one_input() {
        let a = ckpt("a", &[("t", vec![1.0, 2.0, 3.0])]);
        let b = ckpt("b", &[("t", vec![9.0, 9.0, 9.0])]);
        let merged = average_checkpoints(&[a.clone(), b], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(merged.tensors["t"].data, a.tensors["t"].data);
    }

    #[test]
    fn permutation_invariance_is_exact() {
        // Values chosen to make naive left-to-right f64 summation
        // order-sensitive.
        let a = ckpt("a", &[("t", vec![1.0e8, -3.25, 7.5e-6])]);
        let b = ckpt("b", &[("t", vec![-1.0e8, 11.0, 2.25e-3])]);
        let c = ckpt("c", &[("t", vec![3.5e7, 0.125, -9.0e2])]);
        let abc = average_checkpoints(&[a.clone(), b.clone(), c.clone()], None).unwrap();
        let cab = average_checkpoints(&[c, a, b], None).unwrap();
        for (x, y) in abc.tensors["t"].data.iter().zip(&cab.tensors["t"].data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn linearity_of_duplicated_inputs() {
        let a = ckpt("a", &[("t", vec![1.0, -4.0, 0.5])]);
        let b = ckpt("b", &[("t", vec![3.0, 8.0, 0.25])]);
        let once = average_checkpoints(&[a.clone(), b.clone()], None).unwrap();
        let twice = average_checkpoints(&[a.clone(), a, b.clone(), b], None).unwrap();
        for (x, y) in once.tensors["t"].data.iter().zip(&twice.tensors["t"].data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn structural_mismatch_lists_offending_tensors() {
        let a = ckpt("a", &[("t", vec![0.0; 4]), ("u", vec![0.0; 2])]);
        let b = ckpt("b", &[("t", vec![0.0; 4])]);
        let err = average_checkpoints(&[a, b], None).unwrap_err();
        match err {
            CkptError::StructuralDiff { details } => {
                assert!(details.iter().any(|d| d.contains("u")), "{details:?}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let original = ckpt("a", &[("w.0", vec![1.5, -2.25, 3.125]), ("w.1", vec![0.0; 7])]);
        save_checkpoint(&path, &original).unwrap();
        let loaded = load_checkpoint(&path, false).unwrap();
        assert_eq!(loaded, original);
    }

    #[test]
    fn nonfinite_values_are_rejected_by_name_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let bad = ckpt("a", &[("t", vec![1.0, f32::NAN, 2.0])]);
        save_checkpoint(&path, &bad).unwrap();
        let err = load_checkpoint(&path, false).unwrap_err();
        match err {
            CkptError::NonFinite { tensor, index } => {
                assert_eq!(tensor, "t");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(load_checkpoint(&path, true).is_ok());
    }
}
