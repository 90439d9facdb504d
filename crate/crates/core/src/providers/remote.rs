//! Clients for the attention and generation wire protocols.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::transport::{HttpResponse, Transport};
use super::{
    AttentionProvider, AttentionRequest, GenerationRequest, GenerationResult, Generator,
    InFlightLimiter, ProviderError, RetryPolicy, Usage,
};
use crate::attention::AttentionSnapshot;
use crate::context::Span;

pub const ATTENTION_PATH: &str = "/v1/attention";
pub const CHAT_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWireRequest {
    pub text: String,
    pub task: String,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWireResponse {
    pub layer: usize,
    pub num_heads: usize,
    pub heads: Vec<Vec<f64>>,
    pub token_offsets: Vec<[usize; 2]>,
    pub task_token_count: usize,
}

impl From<&AttentionSnapshot> for AttentionWireResponse {
    fn from(s: &AttentionSnapshot) -> Self {
        Self {
            layer: s.layer,
            num_heads: s.heads.len(),
            heads: s.heads.clone(),
            token_offsets: s.token_offsets.iter().map(|o| [o.start, o.end]).collect(),
            task_token_count: s.task_token_count,
        }
    }
}

impl TryFrom<AttentionWireResponse> for AttentionSnapshot {
    type Error = ProviderError;

    fn try_from(w: AttentionWireResponse) -> Result<Self, Self::Error> {
        if w.num_heads != w.heads.len() {
            return Err(ProviderError::Protocol(format!(
                "num_heads {} but {} head vectors",
                w.num_heads,
                w.heads.len()
            )));
        }
        Ok(AttentionSnapshot {
            layer: w.layer,
            heads: w.heads,
            token_offsets: w.token_offsets.iter().map(|[s, e]| Span::new(*s, *e)).collect(),
            task_token_count: w.task_token_count,
        })
    }
}

#[derive(Debug, Deserialize)]
struct LayerRangeBody {
    layer: usize,
    num_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub finish_reason: String,
}

fn is_transient(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

fn check_status(resp: &HttpResponse) -> Result<(), ProviderError> {
    match resp.status {
        200..=299 => Ok(()),
        s if is_transient(s) => Err(ProviderError::Transport(format!("HTTP {s}: {}", resp.body))),
        s => Err(ProviderError::Rejected {
            status: s,
            body: resp.body.clone(),
        }),
    }
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}{path}", endpoint.trim_end_matches('/'))
}

/// Attention client for `POST /v1/attention`.
pub struct RemoteAttentionClient {
    endpoint: String,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: Arc<InFlightLimiter>,
}

impl RemoteAttentionClient {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: endpoint.into(),
            transport,
            retry: RetryPolicy::default(),
            limiter: Arc::new(InFlightLimiter::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<InFlightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn url(&self) -> String {
        join_url(&self.endpoint, ATTENTION_PATH)
    }

    /// Serialized request body; also the replay key.
    pub fn request_body(req: &AttentionRequest) -> String {
        serde_json::to_string(&AttentionWireRequest {
            text: req.document.clone(),
            task: req.task.clone(),
            layer: req.layer,
        })
        .expect("plain struct serializes")
    }

    pub fn parse_response(body: &str) -> Result<AttentionSnapshot, ProviderError> {
        let wire: AttentionWireResponse =
            serde_json::from_str(body).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        wire.try_into()
    }
}

impl AttentionProvider for RemoteAttentionClient {
    fn fetch_attention(&self, req: &AttentionRequest) -> Result<AttentionSnapshot, ProviderError> {
        let url = self.url();
        let body = Self::request_body(req);
        let resp = self.retry.run(|| {
            let _slot = self.limiter.acquire();
            let resp = self.transport.post(&url, &[], &body)?;
            if resp.status == 400 {
                if let Ok(r) = serde_json::from_str::<LayerRangeBody>(&resp.body) {
                    return Err(ProviderError::LayerOutOfRange {
                        layer: r.layer,
                        num_layers: r.num_layers,
                    });
                }
            }
            check_status(&resp)?;
            Ok(resp)
        })?;
        Self::parse_response(&resp.body)
    }

    fn label(&self) -> String {
        format!("remote({})", self.endpoint)
    }
}

/// Generator client for a chat-completions-style endpoint.
pub struct RemoteGenerator {
    endpoint: String,
    model: String,
    auth_env: Option<String>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: Arc<InFlightLimiter>,
}

impl RemoteGenerator {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_env: None,
            transport,
            retry: RetryPolicy::default(),
            limiter: Arc::new(InFlightLimiter::default()),
        }
    }

    /// Reads a bearer token from `var` on every call.
    pub fn with_auth_env(mut self, var: impl Into<String>) -> Self {
        self.auth_env = Some(var.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<InFlightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn url(&self) -> String {
        join_url(&self.endpoint, CHAT_PATH)
    }

    pub fn request_body(&self, req: &GenerationRequest) -> String {
        let mut messages = Vec::with_capacity(2);
        if !req.system.is_empty() {
            messages.push(ChatMessage {
                role: "system".into(),
                content: req.system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: req.user.clone(),
        });
        let model = if req.model.is_empty() {
            self.model.clone()
        } else {
            req.model.clone()
        };
        serde_json::to_string(&ChatRequest {
            model,
            messages,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        })
        .expect("plain struct serializes")
    }

    fn headers(&self) -> Result<Vec<(String, String)>, ProviderError> {
        match &self.auth_env {
            None => Ok(Vec::new()),
            Some(var) => {
                let key = std::env::var(var).map_err(|_| {
                    ProviderError::Config(format!("environment variable {var} is not set"))
                })?;
                Ok(vec![("authorization".into(), format!("Bearer {key}"))])
            }
        }
    }

    pub fn parse_response(body: &str) -> Result<GenerationResult, ProviderError> {
        let r: ChatResponse =
            serde_json::from_str(body).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if matches!(r.finish_reason.as_str(), "content_filter" | "refusal") {
            return Err(ProviderError::Refusal {
                payload: body.to_string(),
            });
        }
        if r.text.is_empty() {
            return Err(ProviderError::Protocol("empty completion".into()));
        }
        Ok(GenerationResult {
            text: r.text,
            usage: r.usage,
            finish_reason: r.finish_reason,
        })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let headers = self.headers()?;
        let url = self.url();
        let body = self.request_body(req);
        let resp = self.retry.run(|| {
            let _slot = self.limiter.acquire();
            let resp = self.transport.post(&url, &headers, &body)?;
            check_status(&resp)?;
            Ok(resp)
        })?;
        Self::parse_response(&resp.body)
    }

    fn label(&self) -> String {
        self.model.clone()
    }
}
