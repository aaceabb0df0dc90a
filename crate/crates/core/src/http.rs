//! HTTP clients for OpenAI-compatible chat-completion and embedding endpoints.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::config::{EndpointConfig, ToolConfig};
use crate::decompose::{ChatBackend, ChatRequest};
use crate::error::{Error, Result};
use crate::store::EmbeddingBackend;

/// Exponential backoff on transport failures, 429 and 5xx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }

    pub fn is_retryable(status: u16) -> bool {
        status == 429 || (500..600).contains(&status)
    }
}

struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    requests: AtomicUsize,
}

impl JsonEndpoint {
    fn new(base_url: &str, path: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        Self {
            agent,
            url: format!("{base}{path}"),
            api_key,
            retry,
            requests: AtomicUsize::new(0),
        }
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let (failure, retry_after) = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp
                            .body_mut()
                            .read_json::<Value>()
                            .map_err(|e| Error::Parse(format!("{}: invalid JSON response: {e}", self.url)));
                    }
                    let retry_after = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    let failure = Error::Transport(format!("{}: HTTP {status}: {}", self.url, snippet(&text)));
                    if !RetryPolicy::is_retryable(status) {
                        return Err(failure);
                    }
                    (failure, retry_after)
                }
                Err(e) => (Error::Transport(format!("{}: {e}", self.url)), None),
            };
            if attempt >= self.retry.max_retries {
                return Err(failure);
            }
            let wait = retry_after.unwrap_or_else(|| self.retry.delay(attempt)).min(self.retry.max_delay);
            log::warn!("{failure}; retrying in {wait:?}");
            thread::sleep(wait);
            attempt += 1;
        }
    }
}

fn snippet(text: &str) -> String {
    let t = text.trim();
    match t.char_indices().nth(200) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}

pub struct HttpChatClient {
    endpoint: JsonEndpoint,
}

impl HttpChatClient {
    pub fn new(base_url: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        Self {
            endpoint: JsonEndpoint::new(base_url, "/v1/chat/completions", api_key, retry, timeout),
        }
    }

    pub fn from_config(cfg: &ToolConfig) -> Self {
        Self::new(&cfg.chat.base_url, cfg.chat.api_key(), retry_from(cfg), cfg.timeout)
    }

    /// Number of HTTP requests issued, retries included.
    pub fn requests(&self) -> usize {
        self.endpoint.requests.load(Ordering::Relaxed)
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = serde_json::to_value(request).expect("chat request serializes");
        let resp = self.endpoint.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| Error::Parse("chat response has no choices[0].message.content".into()))
    }
}

pub struct HttpEmbeddingClient {
    endpoint: JsonEndpoint,
    model: String,
}

impl HttpEmbeddingClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        Self {
            endpoint: JsonEndpoint::new(base_url, "/v1/embeddings", api_key, retry, timeout),
            model: model.to_string(),
        }
    }

    pub fn from_config(cfg: &ToolConfig) -> Self {
        let EndpointConfig { base_url, model, .. } = &cfg.embeddings;
        Self::new(base_url, model, cfg.embeddings.api_key(), retry_from(cfg), cfg.timeout)
    }

    pub fn requests(&self) -> usize {
        self.endpoint.requests.load(Ordering::Relaxed)
    }
}

impl EmbeddingBackend for HttpEmbeddingClient {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let resp = self.endpoint.post(&json!({ "model": self.model, "input": texts }))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse("embedding response has no data array".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(i, |v| v as usize);
            let vector = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Parse(format!("data[{i}] has no embedding")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Parse(format!("data[{i}] has a non-numeric value"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }

    fn model(&self) -> &str {
        &self.model
    }
}

fn retry_from(cfg: &ToolConfig) -> RetryPolicy {
    RetryPolicy {
        max_retries: cfg.max_retries,
        base_delay: cfg.retry_base,
        ..RetryPolicy::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{ChatMessage, Role};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    struct Captured {
        path: String,
        auth: Option<String>,
        body: Value,
    }

    /// Serves the scripted `(status, body)` replies in order, one per connection.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (status, reply) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut len = 0;
                let mut auth = None;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (k, v) = h.split_once(':').unwrap();
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Captured {
                    path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                    auth,
                    body: serde_json::from_slice(&body).unwrap(),
                });
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                )
                .unwrap();
            }
        });
        (addr, seen)
    }

    fn fast_retry(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(5),
        }
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.1,
            messages: vec![ChatMessage {
                role: Role::User,
                content: "hi".into(),
            }],
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
        assert_eq!(p.delay(10), Duration::from_secs(30));
        assert!(RetryPolicy::is_retryable(429) && RetryPolicy::is_retryable(503));
        assert!(!RetryPolicy::is_retryable(400) && !RetryPolicy::is_retryable(401));
    }

    #[test]
    fn chat_wire_format() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"{\"positives\":[\"a\"],\"negatives\":[]}"}}]}"#;
        let (url, seen) = serve(vec![(200, reply.into())]);
        let client = HttpChatClient::new(&url, Some("sk-test".into()), fast_retry(0), Duration::from_secs(5));
        let text = client.complete(&request()).unwrap();
        assert_eq!(text, r#"{"positives":["a"],"negatives":[]}"#);
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].path, "/v1/chat/completions");
        assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
        assert_eq!(seen[0].body, json!({"model":"m","temperature":0.1,"messages":[{"role":"user","content":"hi"}]}));
    }

    #[test]
    fn retries_429_and_5xx_then_succeeds() {
        let ok = r#"{"data":[{"index":1,"embedding":[3,4]},{"index":0,"embedding":[1.5,2]}]}"#;
        let (url, seen) = serve(vec![(429, "{}".into()), (503, "{}".into()), (200, ok.into())]);
        let client = HttpEmbeddingClient::new(&format!("{url}/v1/"), "e", None, fast_retry(3), Duration::from_secs(5));
        let out = client.embed_batch(&["x".into(), "y".into()]).unwrap();
        assert_eq!(out, vec![vec![1.5, 2.0], vec![3.0, 4.0]]);
        assert_eq!(client.requests(), 3);
        let seen = seen.lock().unwrap();
        assert!(seen.iter().all(|c| c.path == "/v1/embeddings" && c.auth.is_none()));
        assert_eq!(seen[2].body, json!({"model":"e","input":["x","y"]}));
    }

    #[test]
    fn gives_up_after_max_retries_and_on_client_errors() {
        let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
        let client = HttpChatClient::new(&url, None, fast_retry(1), Duration::from_secs(5));
        assert!(matches!(client.complete(&request()), Err(Error::Transport(_))));
        assert_eq!(client.requests(), 2);

        let (url, _) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
        let client = HttpChatClient::new(&url, None, fast_retry(3), Duration::from_secs(5));
        let err = client.complete(&request()).unwrap_err();
        assert!(err.to_string().contains("401"), "{err}");
        assert_eq!(client.requests(), 1);
    }

    #[test]
    fn connection_refused_is_a_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = HttpChatClient::new(&format!("http://127.0.0.1:{port}"), None, fast_retry(1), Duration::from_secs(2));
        assert!(matches!(client.complete(&request()), Err(Error::Transport(_))));
        assert_eq!(client.requests(), 2);
    }

    #[test]
    fn malformed_payloads_are_parse_errors() {
        let (url, _) = serve(vec![(200, r#"{"choices":[]}"#.into()), (200, r#"{"data":[{"embedding":["x"]}]}"#.into())]);
        let chat = HttpChatClient::new(&url, None, fast_retry(0), Duration::from_secs(5));
        assert!(matches!(chat.complete(&request()), Err(Error::Parse(_))));
        let emb = HttpEmbeddingClient::new(&url, "e", None, fast_retry(0), Duration::from_secs(5));
        assert!(matches!(emb.embed_batch(&["x".into()]), Err(Error::Parse(_))));
    }
}
