//! Gateway for text completion, vision completion and embedding calls.
//!
//! Every provider call in the pipeline goes through [`ChatGateway`] or
//! [`Embedder`]. The gateway adds a content-addressed disk cache, retries
//! with exponential backoff and a global in-flight limit on top of a
//! [`ChatBackend`]. Backends are either the OpenAI-compatible HTTP client or
//! the scripted mock used by tests and fixtures.

mod cache;
mod embed;
mod gateway;
mod http;
mod mock;
mod request;
mod retry;

pub use cache::ResponseCache;
pub use embed::{cosine, EmbeddingBackend, EmbeddingVector, Embedder, HashedBagOfWords};
pub use gateway::{BackendReply, ChatBackend, ChatGateway, FnBackend, Reask};
pub use http::{HttpEmbeddingBackend, OpenAiCompatible};
pub use mock::{Compose, ComposeItem, Matcher, MockCall, MockReply, MockRule, MockScript, ScriptedProvider};
pub use request::{cache_key, CacheKey, ChatRequest, ChatResponse, Usage};
pub use retry::RetryPolicy;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("credential environment variable `{0}` is not set")]
    CredentialMissing(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
    #[error("mock script has no rule for request {digest} (model `{model}`, prompt starts {preview:?})")]
    FixtureMiss { digest: String, model: String, preview: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("text is empty after whitespace normalization")]
    EmptyText,
    #[error("embedding dimension {got} does not match {expected} seen earlier in this run")]
    DimensionMismatch { expected: usize, got: usize },
}

impl ProviderError {
    /// Whether another attempt could succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::RateLimited(_) => true,
            ProviderError::Status { status, .. } => *status >= 500 || *status == 408,
            _ => false,
        }
    }
}
