//! LLM inference backend: generation, continuation scoring and embeddings.
//!
//! [`Backend`] is the single contract the pipeline talks to. [`MockBackend`]
//! implements it in-process and deterministically; [`HttpBackend`] speaks
//! the JSON wire protocol served by [`server::serve`] or a real inference
//! service.

mod http;
mod mock;
pub mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MOCK_EMBED_DIM};

/// Decoding defaults used throughout the pipeline.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_NUM_BEAMS: u32 = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Connection failures, timeouts and overload responses. Retryable.
    #[error("transport error: {0}")]
    Transport(String),
    /// Malformed or mismatched responses. Never retried.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error ({status}): {message}")]
    Remote { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub num_beams: u32,
    /// Restrict every output word to this list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_words: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden_words: Option<Vec<String>>,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            num_beams: DEFAULT_NUM_BEAMS,
            allowed_words: None,
            forbidden_words: None,
        }
    }

    pub fn validate(&self) -> BackendResult<()> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.num_beams == 0 {
            return Err(BackendError::InvalidRequest("num_beams must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest("top_p must be in (0, 1]".into()));
        }
        if matches!(&self.allowed_words, Some(w) if w.is_empty()) {
            return Err(BackendError::InvalidRequest("allowed_words must be non-empty when set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenCandidate {
    pub text: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
}

impl ScoreRequest {
    pub fn validate(&self) -> BackendResult<()> {
        if self.continuations.is_empty() {
            return Err(BackendError::InvalidRequest("continuations must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.continuations.iter().all(|c| seen.insert(c)) {
            return Err(BackendError::InvalidRequest("continuations must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sequence,
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub granularity: Granularity,
}

impl EmbedRequest {
    pub fn sequence(texts: Vec<String>) -> Self {
        Self { texts, granularity: Granularity::Sequence }
    }

    pub fn token(texts: Vec<String>) -> Self {
        Self { texts, granularity: Granularity::Token }
    }

    pub fn validate(&self) -> BackendResult<()> {
        if self.texts.is_empty() {
            return Err(BackendError::InvalidRequest("texts must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embeddings {
    /// One vector per text.
    Sequence(Vec<Vec<f64>>),
    /// One matrix (row per token) per text.
    Token(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Embeddings,
}

impl EmbedResponse {
    pub fn check_dims(&self) -> BackendResult<()> {
        let ok = match &self.embeddings {
            Embeddings::Sequence(v) => v.iter().all(|r| r.len() == self.dim),
            Embeddings::Token(m) => m.iter().flatten().all(|r| r.len() == self.dim),
        };
        if ok {
            Ok(())
        } else {
            Err(BackendError::Protocol("embedding dimension differs from reported dim".into()))
        }
    }

    pub fn into_sequence(self) -> BackendResult<Vec<Vec<f64>>> {
        match self.embeddings {
            Embeddings::Sequence(v) => Ok(v),
            Embeddings::Token(_) => Err(BackendError::Protocol("expected sequence embeddings".into())),
        }
    }

    pub fn into_token(self) -> BackendResult<Vec<Vec<Vec<f64>>>> {
        match self.embeddings {
            Embeddings::Token(m) => Ok(m),
            Embeddings::Sequence(_) => Err(BackendError::Protocol("expected token embeddings".into())),
        }
    }
}

pub trait Backend: Send + Sync {
    /// Identifier recorded in candidate files and checkpoints.
    fn model_id(&self) -> &str;

    /// Candidates sorted by descending total log-probability, at most
    /// `num_beams` of them.
    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>>;

    /// One log-probability per continuation, in request order.
    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>>;

    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse>;

    fn generate_batch(&self, reqs: &[GenRequest]) -> Vec<BackendResult<Vec<GenCandidate>>> {
        reqs.iter().map(|r| self.generate(r)).collect()
    }

    fn score_batch(&self, reqs: &[ScoreRequest]) -> Vec<BackendResult<Vec<f64>>> {
        reqs.iter().map(|r| self.score(r)).collect()
    }

    fn embed_batch(&self, reqs: &[EmbedRequest]) -> Vec<BackendResult<EmbedResponse>> {
        reqs.iter().map(|r| self.embed(r)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, req: &GenRequest) -> BackendResult<Vec<GenCandidate>> {
        (**self).generate(req)
    }
    fn score(&self, req: &ScoreRequest) -> BackendResult<Vec<f64>> {
        (**self).score(req)
    }
    fn embed(&self, req: &EmbedRequest) -> BackendResult<EmbedResponse> {
        (**self).embed(req)
    }
    fn generate_batch(&self, reqs: &[GenRequest]) -> Vec<BackendResult<Vec<GenCandidate>>> {
        (**self).generate_batch(reqs)
    }
    fn score_batch(&self, reqs: &[ScoreRequest]) -> Vec<BackendResult<Vec<f64>>> {
        (**self).score_batch(reqs)
    }
    fn embed_batch(&self, reqs: &[EmbedRequest]) -> Vec<BackendResult<EmbedResponse>> {
        (**self).embed_batch(reqs)
    }
}

/// Wire bodies shared by the client and the server.
pub(crate) mod wire {
    use super::*;

    #[derive(Debug, Serialize, Deserialize)]
    pub struct Envelope<T> {
        pub id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub model: Option<String>,
        #[serde(flatten)]
        pub body: T,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct GenerateResponse {
        pub candidates: Vec<GenCandidate>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct ScoreResponse {
        pub logprobs: Vec<f64>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub error: String,
    }
}
