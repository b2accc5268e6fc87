//! Teacher client: question/answer generation from a passage.
//!
//! The live client POSTs `{"passage": <text>}` to a completion-service
//! endpoint and expects `{"question": ..., "answer": ...}` back. The
//! service owns the actual prompting; the prompt template shipped under
//! `assets/prompts/` is the wording the service is expected to wrap the
//! passage in, and its id travels in run manifests for provenance.
//!
//! The stub client derives a deterministic QA pair from the passage hash,
//! which keeps the whole pipeline runnable and byte-reproducible with no
//! model anywhere near CI.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

/// Versioned default prompt template (id `teacher_qa_v1`).
pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../../assets/prompts/teacher_qa_v1.txt");
pub const DEFAULT_PROMPT_TEMPLATE_ID: &str = "teacher_qa_v1";

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("teacher returned an empty {0}")]
    EmptyField(&'static str),
    #[error("teacher call failed after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
}

#[derive(Debug, Clone)]
pub struct TeacherRequest {
    pub passage: String,
    pub prompt_template: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub question: String,
    pub answer: String,
}

pub trait TeacherClient: Send + Sync {
    fn generate(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Live,
    Stub,
}

/// Client configuration, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub mode: TeacherMode,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub prompt_template_path: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_model() -> String {
    "stub-teacher".into()
}

fn default_timeout() -> u64 {
    30
}

fn default_retries() -> usize {
    3
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            mode: TeacherMode::Stub,
            base_url: None,
            model: default_model(),
            prompt_template_path: None,
            timeout_s: default_timeout(),
            max_retries: default_retries(),
        }
    }
}

impl TeacherConfig {
    pub fn build_client(&self) -> Result<Box<dyn TeacherClient>, super::LongQaError> {
        match self.mode {
            TeacherMode::Stub => Ok(Box::new(StubTeacher)),
            TeacherMode::Live => {
                let base_url = self.base_url.clone().ok_or_else(|| {
                    super::LongQaError::BadConfig("live teacher mode requires base_url".into())
                })?;
                Ok(Box::new(HttpTeacher::new(
                    base_url,
                    Duration::from_secs(self.timeout_s),
                    self.max_retries,
                )))
            }
        }
    }

    /// The prompt template text this run is configured with.
    pub fn prompt_template(&self) -> Result<String, super::LongQaError> {
        match &self.prompt_template_path {
            None => Ok(DEFAULT_PROMPT_TEMPLATE.to_string()),
            Some(path) => std::fs::read_to_string(path)
                .map_err(|source| super::LongQaError::Io { path: path.clone(), source }),
        }
    }

    pub fn prompt_template_id(&self) -> String {
        match &self.prompt_template_path {
            None => DEFAULT_PROMPT_TEMPLATE_ID.to_string(),
            Some(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into()),
        }
    }
}

/// Deterministic offline teacher: the QA pair is a pure function of the
/// passage bytes.
pub struct StubTeacher;

impl TeacherClient for StubTeacher {
    fn generate(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let h = fnv1a64(request.passage.as_bytes());
        let marker = format!("{h:016x}");
        Ok(TeacherResponse {
            question: format!(
                "What is the content marker of the excerpt discussed in this document (ref {marker})?"
            ),
            answer: format!(
                "The excerpt's content marker is {marker}; it covers {} characters of the source.",
                request.passage.len()
            ),
        })
    }
}

/// Wire request body.
#[derive(Serialize)]
struct WireRequest<'a> {
    passage: &'a str,
}

pub struct HttpTeacher {
    client: reqwest::blocking::Client,
    endpoint: String,
    max_retries: usize,
}

impl HttpTeacher {
    pub fn new(endpoint: String, timeout: Duration, max_retries: usize) -> HttpTeacher {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client builds");
        HttpTeacher { client, endpoint, max_retries }
    }
}

impl TeacherClient for HttpTeacher {
    fn generate(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let attempts = self.max_retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * attempt as u64));
            }
            let result = self
                .client
                .post(&self.endpoint)
                .json(&WireRequest { passage: &request.passage })
                .send();
            match result {
                Err(e) => last = e.to_string(),
                Ok(response) => {
                    if !response.status().is_success() {
                        last = format!("http status {}", response.status());
                        continue;
                    }
                    match response.json::<TeacherResponse>() {
                        Err(e) => last = format!("unparseable response: {e}"),
                        Ok(parsed) => return validate(parsed),
                    }
                }
            }
        }
        Err(TeacherError::Exhausted { attempts, last })
    }
}

fn validate(response: TeacherResponse) -> Result<TeacherResponse, TeacherError> {
    if response.question.trim().is_empty() {
        return Err(TeacherError::EmptyField("question"));
    }
    if response.answer.trim().is_empty() {
        return Err(TeacherError::EmptyField("answer"));
    }
    Ok(response)
}
