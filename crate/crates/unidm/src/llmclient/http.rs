//! OpenAI-compatible HTTP backend covering both the legacy completions shape
//! (`prompt` / `choices[0].text`) and the chat shape (`messages` /
//! `choices[0].message.content`), with exponential-backoff retry on
//! transient failures.

use std::thread::sleep;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointStyle {
    Completions,
    Chat,
}

impl EndpointStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "completions" | "legacy" => Some(Self::Completions),
            "chat" => Some(Self::Chat),
            _ => None,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Self::Completions => "completions",
            Self::Chat => "chat",
        }
    }

    fn path(&self) -> &'static str {
        match self {
            Self::Completions => "/completions",
            Self::Chat => "/chat/completions",
        }
    }
}

/// Exponential backoff: `base * factor^attempt`, up to `max_attempts` tries.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt)
    }
}

pub struct HttpBackend {
    base_url: String,
    api_key: String,
    style: EndpointStyle,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: &str, style: EndpointStyle) -> Self {
        Self::with_retry(base_url, api_key, style, RetryPolicy::default())
    }

    pub fn with_retry(
        base_url: &str,
        api_key: &str,
        style: EndpointStyle,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            style,
            retry,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        match self.style {
            EndpointStyle::Completions => {
                body["prompt"] = json!(request.prompt);
            }
            EndpointStyle::Chat => {
                body["messages"] = json!([{"role": "user", "content": request.prompt}]);
            }
        }
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        body
    }

    fn parse_reply(&self, reply: &Value) -> Result<CompletionResponse, LlmError> {
        let choice = reply
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| LlmError::MalformedBackendReply("missing choices[0]".to_string()))?;
        let text = match self.style {
            EndpointStyle::Completions => choice.get("text"),
            EndpointStyle::Chat => choice.get("message").and_then(|m| m.get("content")),
        }
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedBackendReply("missing completion text".to_string()))?;
        let usage = |field: &str| {
            reply
                .get("usage")
                .and_then(|u| u.get(field))
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        Ok(CompletionResponse {
            text: text.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
            cached: false,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResponse, AttemptError> {
        let url = format!("{}{}", self.base_url, self.style.path());
        let response = self
            .client
            .post(&url)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .json(&self.body(request))
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(LlmError::AuthFailure(status.as_u16())));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::MalformedBackendReply(
                format!("http {status}"),
            )));
        }
        let reply: Value = response
            .json()
            .map_err(|e| AttemptError::Fatal(LlmError::MalformedBackendReply(e.to_string())))?;
        self.parse_reply(&reply).map_err(AttemptError::Fatal)
    }
}

enum AttemptError {
    Transient(String),
    Fatal(LlmError),
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(message)) => {
                    last = message;
                    if attempt + 1 < self.retry.max_attempts {
                        sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(LlmError::BackendUnavailable(last))
    }

    fn endpoint_style(&self) -> &str {
        self.style.tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// One-shot HTTP server returning canned responses in order; sends each
    /// received request body back over the channel.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let n = stream.read(&mut buf).unwrap();
                let request = String::from_utf8_lossy(&buf[..n]).to_string();
                let payload = request
                    .split("\r\n\r\n")
                    .nth(1)
                    .unwrap_or_default()
                    .to_string();
                tx.send(payload).ok();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            factor: 2,
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            model: "m".to_string(),
            prompt: "hello".to_string(),
            temperature: 0.0,
            max_tokens: 16,
            stop: Vec::new(),
        }
    }

    #[test]
    fn completions_style_round_trip() {
        let reply = r#"{"choices":[{"text":"world"}],"usage":{"prompt_tokens":2,"completion_tokens":1}}"#;
        let (url, rx) = serve(vec![(200, reply.to_string())]);
        let backend = HttpBackend::with_retry(&url, "k", EndpointStyle::Completions, fast_retry());
        let response = backend.complete(&request()).unwrap();
        assert_eq!(response.text, "world");
        assert_eq!(response.prompt_tokens, 2);
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["prompt"], "hello");
        assert!(sent.get("stop").is_none());
        assert!(sent.get("messages").is_none());
    }

    #[test]
    fn chat_style_round_trip() {
        let reply = r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":2}}"#;
        let (url, rx) = serve(vec![(200, reply.to_string())]);
        let backend = HttpBackend::with_retry(&url, "k", EndpointStyle::Chat, fast_retry());
        let response = backend.complete(&request()).unwrap();
        assert_eq!(response.text, "hi");
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn retries_on_server_error_then_succeeds() {
        let good = r#"{"choices":[{"text":"ok"}],"usage":{"prompt_tokens":1,"completion_tokens":1}}"#;
        let (url, _rx) = serve(vec![
            (500, "{}".to_string()),
            (429, "{}".to_string()),
            (200, good.to_string()),
        ]);
        let backend = HttpBackend::with_retry(&url, "k", EndpointStyle::Completions, fast_retry());
        assert_eq!(backend.complete(&request()).unwrap().text, "ok");
    }

    #[test]
    fn auth_failure_does_not_retry() {
        let (url, _rx) = serve(vec![(401, "{}".to_string())]);
        let backend = HttpBackend::with_retry(&url, "k", EndpointStyle::Completions, fast_retry());
        assert!(matches!(
            backend.complete(&request()),
            Err(LlmError::AuthFailure(401))
        ));
    }

    #[test]
    fn exhausted_retries_report_unavailable() {
        let (url, _rx) = serve(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let backend = HttpBackend::with_retry(&url, "k", EndpointStyle::Completions, fast_retry());
        assert!(matches!(
            backend.complete(&request()),
            Err(LlmError::BackendUnavailable(_))
        ));
    }
}
