//! Attention-provider and generator contracts plus their implementations.
//!
//! * [`toy::ToyProvider`] is a deterministic keyword-driven stand-in for a
//!   marking model.
//! * [`scripted::ScriptedGenerator`] answers summarization, identification and
//!   evaluation prompts by fixed rules.
//! * [`remote`] speaks the HTTP wire protocols through a pluggable
//!   [`transport::Transport`], which can record and replay golden files.

pub mod counter;
pub mod remote;
pub mod scripted;
pub mod toy;
pub mod transport;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionError, AttentionSnapshot};

pub use counter::{TokenCounter, WhitespaceCounter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Connection failures, timeouts and server overload. Retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("layer {layer} out of range for a model with {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("content refused: {payload}")]
    Refusal { payload: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid attention snapshot: {0}")]
    InvalidSnapshot(#[from] AttentionError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no recorded interaction for {0}")]
    CassetteMiss(String),
}

impl ProviderError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRequest {
    pub document: String,
    pub task: String,
    pub layer: usize,
}

impl AttentionRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.document.is_empty() {
            return Err(ProviderError::InvalidRequest("empty document".into()));
        }
        Ok(())
    }
}

pub trait AttentionProvider: Send + Sync {
    fn fetch_attention(&self, req: &AttentionRequest) -> Result<AttentionSnapshot, ProviderError>;

    /// Label recorded in profile metadata.
    fn label(&self) -> String;
}

/// Fetches a snapshot and checks it before it enters the scoring path.
pub fn fetch_attention(
    provider: &dyn AttentionProvider,
    req: &AttentionRequest,
) -> Result<AttentionSnapshot, ProviderError> {
    req.validate()?;
    let snap = provider.fetch_attention(req)?;
    snap.validate()?;
    if snap.layer != req.layer {
        return Err(ProviderError::Protocol(format!(
            "requested layer {}, got {}",
            req.layer, snap.layer
        )));
    }
    Ok(snap)
}

/// What a generation call is for. Scripted generators dispatch on it; remote
/// generators ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestPurpose {
    Summarize,
    Refine,
    Identify,
    Answer,
    Title,
}

/// Structured view of what was rendered into the prompt. Never sent over the
/// wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptParts {
    pub context: Option<String>,
    pub previous: Option<String>,
    pub profile: Option<String>,
    pub candidates: Vec<String>,
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub system: String,
    pub user: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub model: String,
    pub purpose: RequestPurpose,
    pub parts: PromptParts,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Usage,
    pub finish_reason: String,
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError>;

    fn label(&self) -> String;
}

/// Validates the request, then calls the generator.
pub fn generate(
    generator: &dyn Generator,
    req: &GenerationRequest,
) -> Result<GenerationResult, ProviderError> {
    req.validate()?;
    generator.generate(req)
}

/// Exponential backoff over transport-class errors only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retriable() && attempt < self.attempts => {
                    log::warn!("attempt {attempt}/{} failed: {e}", self.attempts);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Default bound on concurrent requests toward one remote service.
pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimiter {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard { limiter: self }
    }
}

impl Default for InFlightLimiter {
    fn default() -> Self {
        Self::new(DEFAULT_IN_FLIGHT)
    }
}

pub struct InFlightGuard<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().unwrap();
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}
