//! HTTP client for hosted chat-completion and embedding endpoints.
//!
//! Request shape: `{"model", "messages": [{role, content}], "temperature",
//! "max_tokens"}` in, `choices[0].message.content` out; and
//! `{"model", "input": [..]}` in, `data[i].embedding` out.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{check_embed_inputs, ChatModel, ChatRequest, EmbeddingModel, ProviderConfig, ProviderError};
use crate::error::Result;
use crate::model::Embedding;

/// Spaces requests at least `1 / rps` seconds apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rps: Option<f64>) -> Self {
        Self {
            interval: rps.map(|r| Duration::from_secs_f64(1.0 / r)),
            next_slot: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let start = (*slot).max(now);
            *slot = start + interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

struct HttpClient {
    client: reqwest::blocking::Client,
    api_key: String,
    limiter: RateLimiter,
}

impl HttpClient {
    fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            api_key,
            limiter: RateLimiter::new(cfg.requests_per_second),
        })
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, url: &str, body: &serde_json::Value) -> Result<T, ProviderError> {
        self.limiter.wait();
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(ProviderError::Auth(format!("{url} returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ProviderError::Transport(format!("{url} returned {status}: {text}")));
        }
        resp.json::<T>()
            .map_err(|e| ProviderError::Transport(format!("bad response body: {e}")))
    }
}

pub struct RemoteChat {
    http: HttpClient,
    url: String,
    model: String,
}

impl RemoteChat {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            http: HttpClient::from_config(cfg)?,
            url: cfg.chat_url.clone().unwrap_or_default(),
            model: cfg.chat_model.clone().unwrap_or_default(),
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatModel for RemoteChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp: ChatResponse = self.http.post(&self.url, &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or(ProviderError::EmptyResponse)
    }
}

pub struct RemoteEmbedder {
    http: HttpClient,
    url: String,
    model: String,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            http: HttpClient::from_config(cfg)?,
            url: cfg.embed_url.clone().unwrap_or_default(),
            model: cfg.embed_model.clone().unwrap_or_default(),
            dimension: cfg.dimension,
        })
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl EmbeddingModel for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError> {
        check_embed_inputs(texts)?;
        let body = json!({ "model": self.model, "input": texts });
        let mut resp: EmbedResponse = self.http.post(&self.url, &body)?;
        if resp.data.len() != texts.len() {
            return Err(ProviderError::Transport(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        if resp.data.iter().all(|d| d.index.is_some()) {
            resp.data.sort_by_key(|d| d.index);
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dimension {
                    return Err(ProviderError::DimensionMismatch {
                        expected: self.dimension,
                        found: d.embedding.len(),
                    });
                }
                Embedding::normalized(d.embedding)
                    .map_err(|e| ProviderError::Transport(format!("unusable embedding: {e}")))
            })
            .collect()
    }
}
