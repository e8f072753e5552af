//! Chat-completion and embedding backends.
//!
//! Every LLM role in the system (step selector, summarizer, hinter, ranker)
//! is a [`ChatBackend`]. The scripted backend answers from a rule table so
//! whole pipelines run offline and deterministically; the HTTP backend talks
//! to any OpenAI-compatible endpoint.

mod embed;
mod http;
mod scripted;
pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine, HashingEmbedder, HttpEmbedder, HASHING_DIMENSION, HASHING_SEED};
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{CallRecord, Matcher, ScriptFile, ScriptRule, ScriptedBackend};
pub use template::{bindings, Bindings, PromptTemplate, TemplateError, TemplateId, TemplateSet};

/// Completion budget for hinter calls.
pub const HINTER_MAX_TOKENS: u32 = 2048;
/// Completion budget for summarizer, context and ranking calls.
pub const SUMMARY_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("api error {status}: {body}")]
    Api { status: u16, body: String },
    #[error("no script rule matched")]
    NoRuleMatched,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    Decode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpOpenaiCompatible,
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Overrides the backend's configured model when non-empty.
    #[serde(default)]
    pub model_tag: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
            model_tag: String::new(),
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

pub trait ChatBackend: Send + Sync {
    fn model_tag(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn model_tag(&self) -> &str {
        (**self).model_tag()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Text embedder returning unit-normalized vectors of fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        (**self).embed(text)
    }
}

/// Scales `v` to unit length. Returns `None` for the zero vector.
pub(crate) fn l2_normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
