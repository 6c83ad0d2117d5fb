//! Blocking HTTP clients for OpenAI-compatible embedding and chat endpoints,
//! plus a simple `/rerank` scoring endpoint.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_embeddings, Embedder, Generator, Reranker};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingVector;

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_max_in_flight() -> usize {
    8
}
fn default_batch_size() -> usize {
    32
}

/// Connection settings for one remote model.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Required for embedders; ignored otherwise.
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            dimension: None,
            timeout_secs: default_timeout_secs(),
            max_attempts: default_max_attempts(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
            batch_size: default_batch_size(),
        }
    }
}

impl fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key_env", &self.api_key_env)
            .field("dimension", &self.dimension)
            .field("max_attempts", &self.max_attempts)
            .field("max_in_flight", &self.max_in_flight)
            .finish_non_exhaustive()
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

struct HttpClient {
    cfg: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    slots: Slots,
}

impl HttpClient {
    fn new(cfg: HttpConfig) -> Result<Self> {
        if cfg.base_url.trim().is_empty() {
            return Err(Error::Config("provider base_url is empty".into()));
        }
        if cfg.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("credential environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        let slots = Slots::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            api_key,
            client,
            slots,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let _slot = self.slots.acquire();
        let mut last_status = None;
        let mut last_message = String::new();

        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| Error::Protocol {
                        endpoint: url.clone(),
                        message: format!("cannot read response body: {e}"),
                    })?;
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| Error::Protocol {
                            endpoint: url.clone(),
                            message: format!("response is not JSON: {e}"),
                        });
                    }
                    last_status = Some(status.as_u16());
                    last_message = format!("status {status}: {}", truncate(&text, 200));
                    let transient = status.is_server_error() || status.as_u16() == 429;
                    if !transient {
                        break;
                    }
                }
                Err(e) => {
                    last_status = None;
                    last_message = format!("transport error: {e}");
                }
            }
        }

        Err(Error::Provider {
            endpoint: url,
            status: last_status,
            message: last_message,
        })
    }

    fn protocol(&self, path: &str, message: impl Into<String>) -> Error {
        Error::Protocol {
            endpoint: self.url(path),
            message: message.into(),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

const EMBEDDINGS_PATH: &str = "/v1/embeddings";
const CHAT_PATH: &str = "/v1/chat/completions";
const RERANK_PATH: &str = "/rerank";

/// Embedder posting `{"model", "input": [...]}` and reading `data[].embedding`.
/// Every returned vector is normalized locally.
pub struct HttpEmbedder {
    http: HttpClient,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        let dimension = cfg
            .dimension
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Config("http embedder needs a positive dimension".into()))?;
        Ok(Self {
            http: HttpClient::new(cfg)?,
            dimension,
        })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({ "model": self.http.cfg.model, "input": texts });
        let resp = self.http.post_json(EMBEDDINGS_PATH, &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| self.http.protocol(EMBEDDINGS_PATH, "missing `data` array"))?;

        let mut rows: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let raw: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| self.http.protocol(EMBEDDINGS_PATH, "item missing `embedding`"))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| self.http.protocol(EMBEDDINGS_PATH, "non-numeric embedding"))
                })
                .collect::<Result<_>>()?;
            if raw.len() != self.dimension {
                return Err(self.http.protocol(
                    EMBEDDINGS_PATH,
                    format!("expected dimension {}, got {}", self.dimension, raw.len()),
                ));
            }
            let v = EmbeddingVector::normalize(&raw)
                .map_err(|e| self.http.protocol(EMBEDDINGS_PATH, e.to_string()))?;
            rows.push((index, v));
        }
        rows.sort_by_key(|(i, _)| *i);
        let out: Vec<_> = rows.into_iter().map(|(_, v)| v).collect();
        check_embeddings(&self.http.url(EMBEDDINGS_PATH), self.dimension, texts.len(), &out)?;
        Ok(out)
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.http.cfg.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let batch = self.http.cfg.batch_size.max(1);
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(batch) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

/// Chat-completions generator: one user message, temperature 0.
pub struct HttpGenerator {
    http: HttpClient,
}

impl HttpGenerator {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }
}

impl Generator for HttpGenerator {
    fn id(&self) -> &str {
        &self.http.cfg.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.http.cfg.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0.0,
        });
        let resp = self.http.post_json(CHAT_PATH, &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| self.http.protocol(CHAT_PATH, "missing choices[0].message.content"))
    }
}

/// Reranker posting `{"query", "documents"}` and reading `{"scores"}`.
pub struct HttpReranker {
    http: HttpClient,
}

impl HttpReranker {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }
}

impl Reranker for HttpReranker {
    fn id(&self) -> &str {
        &self.http.cfg.model
    }

    fn score(&self, query: &str, document: &str) -> Result<f64> {
        Ok(self.score_batch(query, &[document])?[0])
    }

    fn score_batch(&self, query: &str, documents: &[&str]) -> Result<Vec<f64>> {
        let body = json!({ "model": self.http.cfg.model, "query": query, "documents": documents });
        let resp = self.http.post_json(RERANK_PATH, &body)?;
        let scores = resp
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| self.http.protocol(RERANK_PATH, "missing `scores` array"))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| self.http.protocol(RERANK_PATH, "non-numeric score"))
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != documents.len() {
            return Err(self.http.protocol(
                RERANK_PATH,
                format!("expected {} scores, got {}", documents.len(), scores.len()),
            ));
        }
        Ok(scores)
    }
}
