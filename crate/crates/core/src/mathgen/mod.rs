//! Synthetic math QA expansion.
//!
//! A template abstracts a word problem: the numbers become parameters
//! with domains, the solution becomes a small exact-arithmetic program,
//! and constraints keep resampled values answerable (divisibility,
//! positivity, and so on). Expansion rejection-samples substitutions,
//! evaluates the program over exact rationals, and renders new
//! question–answer pairs — many reliable variants per authored template.
//!
//! Templates whose program fails to reproduce the recorded original
//! answer are rejected before any expansion (the faithfulness gate): if
//! the abstraction cannot even recover the problem it came from, nothing
//! it generates can be trusted.

pub mod ast;
pub mod eval;
mod lexer;
mod parser;

pub use ast::{BinOp, Expr, UnaryOp};
pub use eval::{check_domains, eval_expr, eval_program, run_program, ProgramOutcome, Value};
pub use parser::{parse_expr, parse_template, placeholders};

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::hash::fnv1a64;
use crate::rng::keyed_rng;

/// Line/column of a token, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error)]
pub enum MathError {
    #[error("{template}:{pos}: {message}")]
    Parse { template: String, pos: Pos, message: String },
    #[error("template {template}: param {param}: {reason}")]
    Precondition { template: String, param: String, reason: String },
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
    #[error("type error in `{expr}`: {reason}")]
    TypeMismatch { expr: String, reason: String },
    #[error("template {template}: exhausted {attempts} attempts; last failure: {}", last_failure.as_deref().unwrap_or("none recorded"))]
    Exhausted { template: String, attempts: usize, last_failure: Option<String> },
    #[error("template {template}: program computes {got} for the original values but the recorded answer is {expected}")]
    Faithfulness { template: String, expected: BigRational, got: BigRational },
    #[error("template i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("param {param} in template {template}: domain too large to sample")]
    DomainTooLarge { template: String, param: String },
}

/// A parameter and its sampling domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Inclusive integer interval.
    IntRange { lo: BigInt, hi: BigInt },
    /// Finite set of rationals.
    RationalSet(Vec<BigRational>),
}

/// Constraint checks and local assignments, in file order. Constraints may
/// reference locals assigned above them.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Constraint(Expr),
    Let { name: String, expr: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginalBlock {
    pub values: BTreeMap<String, BigRational>,
    pub answer: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MathTemplate {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub steps: Vec<Step>,
    pub return_expr: Expr,
    pub question_template: String,
    pub original: Option<OriginalBlock>,
}

impl MathTemplate {
    /// The faithfulness gate: when an original block is present, the
    /// program must reproduce the recorded answer under the original
    /// values. Templates without an original block pass vacuously.
    pub fn verify_original(&self) -> Result<(), MathError> {
        let Some(original) = &self.original else {
            return Ok(());
        };
        let got = eval_program(self, &original.values)?;
        if got != original.answer {
            return Err(MathError::Faithfulness {
                template: self.name.clone(),
                expected: original.answer.clone(),
                got,
            });
        }
        Ok(())
    }
}

/// One generated question–answer pair. The answer is exact; the
/// substitution records which values produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QAInstance {
    pub template: String,
    pub substitution: BTreeMap<String, BigRational>,
    pub question: String,
    pub answer: BigRational,
}

/// Renders a rational for question text and JSON: `12` when integral,
/// `3/4` otherwise.
pub fn render_rational(value: &BigRational) -> String {
    value.to_string()
}

fn render_question(template: &MathTemplate, substitution: &BTreeMap<String, BigRational>) -> String {
    let mut out = String::with_capacity(template.question_template.len() + 16);
    let mut chars = template.question_template.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '{' {
            out.push(c);
            continue;
        }
        let mut name = String::new();
        for c in chars.by_ref() {
            if c == '}' {
                break;
            }
            name.push(c);
        }
        let value = &substitution[&name]; // placeholders are validated at parse
        out.push_str(&render_rational(value));
    }
    out
}

fn sample_substitution<R: Rng>(
    template: &MathTemplate,
    rng: &mut R,
) -> Result<BTreeMap<String, BigRational>, MathError> {
    let mut substitution = BTreeMap::new();
    for p in &template.params {
        let value = match &p.domain {
            Domain::IntRange { lo, hi } => {
                let width = (hi - lo + 1u32).to_u64().ok_or_else(|| MathError::DomainTooLarge {
                    template: template.name.clone(),
                    param: p.name.clone(),
                })?;
                let offset = rng.random_range(0..width);
                BigRational::from_integer(lo + BigInt::from(offset))
            }
            Domain::RationalSet(values) => values[rng.random_range(0..values.len())].clone(),
        };
        substitution.insert(p.name.clone(), value);
    }
    Ok(substitution)
}

/// Rejection-samples one instance. The RNG for attempt `a` of instance
/// `instance_index` is keyed by `(seed, template name, instance_index, a)`,
/// so expansion parallelizes without changing output.
pub fn instantiate_indexed(
    template: &MathTemplate,
    seed: u64,
    instance_index: u64,
    max_attempts: usize,
) -> Result<QAInstance, MathError> {
    assert!(max_attempts >= 1, "max_attempts must be >= 1");
    let name_key = fnv1a64(template.name.as_bytes());
    let mut last_failure = None;

    for attempt in 0..max_attempts {
        let mut rng =
            keyed_rng(seed, "mathgen/attempt", &[name_key, instance_index, attempt as u64]);
        let substitution = sample_substitution(template, &mut rng)?;
        match run_program(template, &substitution, true) {
            Ok(ProgramOutcome::Answer(answer)) => {
                let question = render_question(template, &substitution);
                return Ok(QAInstance {
                    template: template.name.clone(),
                    substitution,
                    question,
                    answer,
                });
            }
            Ok(ProgramOutcome::ConstraintFailed { constraint, .. }) => {
                last_failure = Some(format!("constraint `{constraint}` not satisfied"));
            }
            Err(e @ (MathError::DivisionByZero { .. } | MathError::TypeMismatch { .. })) => {
                // Evaluation failure under this substitution: reject and resample.
                last_failure = Some(e.to_string());
            }
            Err(other) => return Err(other),
        }
    }

    Err(MathError::Exhausted {
        template: template.name.clone(),
        attempts: max_attempts,
        last_failure,
    })
}

/// [`instantiate_indexed`] for a standalone draw (instance index 0).
pub fn instantiate(
    template: &MathTemplate,
    seed: u64,
    max_attempts: usize,
) -> Result<QAInstance, MathError> {
    instantiate_indexed(template, seed, 0, max_attempts)
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateStats {
    pub template: String,
    pub requested: usize,
    pub succeeded: usize,
    pub exhausted: usize,
    /// Set when the faithfulness gate rejected the template; no instances
    /// are emitted for it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpandStats {
    pub per_template: Vec<TemplateStats>,
    pub total_instances: usize,
}

#[derive(Debug)]
pub struct ExpandOutput {
    pub instances: Vec<QAInstance>,
    pub stats: ExpandStats,
}

/// Expands every template `per_template` times. Faithfulness-gate
/// rejections and per-instance exhaustions are recorded in the stats
/// rather than aborting the run. Output order is (template order,
/// instance index) regardless of worker count.
pub fn expand_dataset(
    templates: &[MathTemplate],
    per_template: usize,
    seed: u64,
    max_attempts: usize,
) -> ExpandOutput {
    let mut instances = Vec::new();
    let mut per_template_stats = Vec::new();

    for template in templates {
        if let Err(gate) = template.verify_original() {
            per_template_stats.push(TemplateStats {
                template: template.name.clone(),
                requested: per_template,
                succeeded: 0,
                exhausted: 0,
                rejected: Some(gate.to_string()),
            });
            continue;
        }

        let results: Vec<Result<QAInstance, MathError>> = (0..per_template as u64)
            .into_par_iter()
            .map(|index| instantiate_indexed(template, seed, index, max_attempts))
            .collect();

        let mut stats = TemplateStats {
            template: template.name.clone(),
            requested: per_template,
            succeeded: 0,
            exhausted: 0,
            rejected: None,
        };
        for result in results {
            match result {
                Ok(instance) => {
                    stats.succeeded += 1;
                    instances.push(instance);
                }
                Err(MathError::Exhausted { .. }) => stats.exhausted += 1,
                Err(other) => {
                    // Domain or template-level failures surface as a rejection.
                    stats.rejected = Some(other.to_string());
                    break;
                }
            }
        }
        per_template_stats.push(stats);
    }

    let total_instances = instances.len();
    ExpandOutput {
        instances,
        stats: ExpandStats { per_template: per_template_stats, total_instances },
    }
}

/// JSON-lines encoding: `{"template", "substitution", "question",
/// "answer_num", "answer_den"}`. Numerator/denominator are decimal strings
/// so arbitrary-precision answers survive JSON.
pub fn write_dataset<W: Write>(out: &mut W, instances: &[QAInstance]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        template: &'a str,
        substitution: BTreeMap<&'a str, String>,
        question: &'a str,
        answer_num: String,
        answer_den: String,
    }
    for instance in instances {
        let line = Line {
            template: &instance.template,
            substitution: instance
                .substitution
                .iter()
                .map(|(k, v)| (k.as_str(), render_rational(v)))
                .collect(),
            question: &instance.question,
            answer_num: instance.answer.numer().to_string(),
            answer_den: instance.answer.denom().to_string(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads every `*.mt` file in a directory as a template named by its file
/// stem, sorted by name for deterministic order.
pub fn load_templates_dir(dir: &Path) -> Result<Vec<MathTemplate>, MathError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| MathError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "mt"))
        .collect();
    paths.sort();
    let mut templates = Vec::with_capacity(paths.len());
    for path in paths {
        let source = std::fs::read_to_string(&path)
            .map_err(|source| MathError::Io { path: path.clone(), source })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        templates.push(parse_template(&name, &source)?);
    }
    Ok(templates)
}

/// `question\nanswer` rendering of an instance, the form mixtures ingest.
pub fn instance_text(instance: &QAInstance) -> String {
    format!("{}\n{}", instance.question, render_rational(&instance.answer))
}
