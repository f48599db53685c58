//! Backend-agnostic completion interface: an OpenAI-compatible HTTP backend,
//! a deterministic scripted mock, a persistent response cache and a token
//! ledger separating logical consumption (all calls) from billed consumption
//! (cache misses only).

mod cache;
mod http;
mod mock;

pub use cache::ResponseCache;
pub use http::{EndpointStyle, HttpBackend, RetryPolicy};
pub use mock::{mock_tokens, MockBackend, MockRule};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend unavailable after retries: {0}")]
    BackendUnavailable(String),
    #[error("authentication failed (http {0})")]
    AuthFailure(u16),
    #[error("no mock rule matches prompt: {0:?}")]
    NoMatchingRule(String),
    #[error("malformed backend reply: {0}")]
    MalformedBackendReply(String),
    #[error("cache corrupt at {path} line {line}: {message}")]
    CacheCorrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache io error: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// One completion request. Temperature defaults to 0 so identical requests
/// are cache-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
}

/// Fixed request parameters reused across a run; only the prompt varies.
#[derive(Debug, Clone)]
pub struct RequestTemplate {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl Default for RequestTemplate {
    fn default() -> Self {
        Self {
            model: "mock".to_string(),
            temperature: 0.0,
            max_tokens: 512,
            stop: Vec::new(),
        }
    }
}

impl RequestTemplate {
    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop: self.stop.clone(),
        }
    }
}

/// A completion backend. Implementations must be callable concurrently from
/// multiple evaluation workers.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
    /// Endpoint style tag mixed into cache keys ("completions", "chat",
    /// "mock").
    fn endpoint_style(&self) -> &str;
}

/// Logical vs billed token accounting. Logical counts cover every call;
/// billed counts cover cache misses only.
#[derive(Debug, Default)]
pub struct TokenLedger {
    logical_prompt_tokens: AtomicU64,
    logical_completion_tokens: AtomicU64,
    billed_prompt_tokens: AtomicU64,
    billed_completion_tokens: AtomicU64,
    call_count: AtomicU64,
    cache_hit_count: AtomicU64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub logical_prompt_tokens: u64,
    pub logical_completion_tokens: u64,
    pub billed_prompt_tokens: u64,
    pub billed_completion_tokens: u64,
    pub call_count: u64,
    pub cache_hit_count: u64,
}

impl TokenLedger {
    fn record(&self, prompt_tokens: u64, completion_tokens: u64, cached: bool) {
        self.call_count.fetch_add(1, Ordering::Relaxed);
        self.logical_prompt_tokens
            .fetch_add(prompt_tokens, Ordering::Relaxed);
        self.logical_completion_tokens
            .fetch_add(completion_tokens, Ordering::Relaxed);
        if cached {
            self.cache_hit_count.fetch_add(1, Ordering::Relaxed);
        } else {
            self.billed_prompt_tokens
                .fetch_add(prompt_tokens, Ordering::Relaxed);
            self.billed_completion_tokens
                .fetch_add(completion_tokens, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            logical_prompt_tokens: self.logical_prompt_tokens.load(Ordering::Relaxed),
            logical_completion_tokens: self.logical_completion_tokens.load(Ordering::Relaxed),
            billed_prompt_tokens: self.billed_prompt_tokens.load(Ordering::Relaxed),
            billed_completion_tokens: self.billed_completion_tokens.load(Ordering::Relaxed),
            call_count: self.call_count.load(Ordering::Relaxed),
            cache_hit_count: self.cache_hit_count.load(Ordering::Relaxed),
        }
    }
}

/// A backend plus optional cache plus ledger. Cache hits replay the stored
/// response with `cached=true` and no billed-token increment.
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    ledger: TokenLedger,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>, cache: Option<ResponseCache>) -> Self {
        Self {
            backend,
            cache,
            ledger: TokenLedger::default(),
        }
    }

    pub fn ledger(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let key = self
            .cache
            .as_ref()
            .map(|_| cache::request_key(self.backend.endpoint_style(), request));

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.lookup(key) {
                let response = CompletionResponse {
                    text: hit.text,
                    prompt_tokens: hit.prompt_tokens,
                    completion_tokens: hit.completion_tokens,
                    cached: true,
                };
                self.ledger
                    .record(response.prompt_tokens, response.completion_tokens, true);
                return Ok(response);
            }
        }

        let response = self.backend.complete(request)?;
        self.ledger
            .record(response.prompt_tokens, response.completion_tokens, false);
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.append(key, &response)?;
        }
        Ok(response)
    }
}
