use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, CompletionRequest, LlmError};

pub const ENV_ENDPOINT: &str = "HINTFORGE_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "HINTFORGE_LLM_API_KEY";
pub const ENV_MODEL: &str = "HINTFORGE_LLM_MODEL";

const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL such as `https://api.openai.com/v1`. A URL that already ends
    /// in the route (`/chat/completions`, `/embeddings`) is used unchanged.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            api_key: None,
            model: "gpt-5-mini".into(),
            max_attempts: 3,
            base_backoff_ms: 250,
            max_backoff_ms: 4_000,
            max_in_flight: 8,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Defaults overridden by `HINTFORGE_LLM_ENDPOINT`, `HINTFORGE_LLM_API_KEY`
    /// and `HINTFORGE_LLM_MODEL` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            cfg.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            cfg.api_key = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            cfg.model = v;
        }
        cfg
    }

    fn url(&self, route: &str) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with(route) {
            base.to_string()
        } else {
            format!("{base}{route}")
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Counting semaphore capping concurrent requests.
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Shared POST-with-retry machinery for the chat and embedding clients.
pub(crate) struct JsonTransport {
    pub(crate) cfg: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT_CHARS).collect()
}

impl JsonTransport {
    pub(crate) fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("http client: {e}")))?;
        let limiter = Limiter::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            client,
            limiter,
        })
    }

    /// Retries transport failures and 408/429/5xx with capped exponential
    /// backoff, up to `max_attempts` total attempts.
    pub(crate) fn post(&self, route: &str, body: &Value) -> Result<Value, LlmError> {
        let url = self.cfg.url(route);
        let attempts = self.cfg.max_attempts.max(1);
        let _permit = self.limiter.acquire();
        let mut last: Option<LlmError> = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.cfg.backoff(attempt - 1));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "llm request failed");
                    last = Some(LlmError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp.text().map_err(|e| LlmError::Transport {
                attempts: attempt,
                message: e.to_string(),
            })?;
            if (200..300).contains(&status) {
                return serde_json::from_str(&text)
                    .map_err(|e| LlmError::Decode(format!("{e}: {}", excerpt(&text))));
            }
            let err = LlmError::Api {
                status,
                body: excerpt(&text),
            };
            if !retryable(status) {
                return Err(err);
            }
            tracing::warn!(attempt, status, "llm endpoint returned retryable status");
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    transport: JsonTransport,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        Ok(Self {
            transport: JsonTransport::new(cfg)?,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.transport.cfg
    }
}

impl ChatBackend for HttpBackend {
    fn model_tag(&self) -> &str {
        &self.transport.cfg.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.check()?;
        let model = if request.model_tag.is_empty() {
            self.transport.cfg.model.as_str()
        } else {
            request.model_tag.as_str()
        };
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let v = self.transport.post("/chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Decode("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 stub: answers the n-th request with `replies[n]`.
    fn stub(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (h, s) = (hits.clone(), seen.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                s.lock().unwrap().push(format!("{head}\n{}", String::from_utf8_lossy(&body)));
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (status, text) = replies.get(n).cloned().unwrap_or((500, "gone".into()));
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits, seen)
    }

    fn ok_body(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn fast_cfg(endpoint: String) -> HttpConfig {
        HttpConfig {
            endpoint,
            api_key: Some("sk-test".into()),
            base_backoff_ms: 5,
            max_backoff_ms: 20,
            ..HttpConfig::default()
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits, seen) = stub(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (200, ok_body("ok")),
        ]);
        let b = HttpBackend::new(fast_cfg(url)).unwrap();
        let out = b.complete(&CompletionRequest::new("hello", 32)).unwrap();
        assert_eq!(out, "ok");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        let first = seen.lock().unwrap()[0].clone();
        assert!(first.starts_with("POST /v1/chat/completions"), "{first}");
        assert!(first.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(first.contains("\"max_tokens\":32"));
        assert!(first.contains("\"temperature\":0.0"));
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (url, hits, _) = stub(vec![(503, "busy".into()); 5]);
        let b = HttpBackend::new(fast_cfg(url)).unwrap();
        let err = b.complete(&CompletionRequest::new("x", 8)).unwrap_err();
        assert_eq!(err, LlmError::Api { status: 503, body: "busy".into() });
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, _) = stub(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let b = HttpBackend::new(fast_cfg(url)).unwrap();
        let err = b.complete(&CompletionRequest::new("x", 8)).unwrap_err();
        assert!(matches!(err, LlmError::Api { status: 401, ref body } if body.contains("bad key")));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = HttpBackend::new(fast_cfg(format!("http://127.0.0.1:{port}"))).unwrap();
        let err = b.complete(&CompletionRequest::new("x", 8)).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 3, .. }), "{err:?}");
    }

    #[test]
    fn backoff_is_capped() {
        let cfg = HttpConfig::default();
        assert_eq!(cfg.backoff(1), Duration::from_millis(250));
        assert_eq!(cfg.backoff(2), Duration::from_millis(500));
        assert_eq!(cfg.backoff(30), Duration::from_millis(4_000));
    }

    #[test]
    fn url_joining() {
        let mut cfg = HttpConfig::default();
        cfg.endpoint = "http://h/v1/".into();
        assert_eq!(cfg.url("/chat/completions"), "http://h/v1/chat/completions");
        cfg.endpoint = "http://h/v1/chat/completions".into();
        assert_eq!(cfg.url("/chat/completions"), "http://h/v1/chat/completions");
    }
}
