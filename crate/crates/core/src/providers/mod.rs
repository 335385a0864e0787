//! Chat and embedding model access.
//!
//! Two backends sit behind the same traits: a remote HTTP client speaking the
//! common hosted chat/embeddings JSON shape, and a deterministic offline mock.
//! Embeddings are L2-normalized at this boundary.

mod json;
mod mock;
#[cfg(feature = "remote")]
mod remote;
mod repair;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::Embedding;

pub use json::extract_json_object;
pub use mock::{MockChat, MockEmbedder, MockEmbeddingMode, MockScript, ScriptRule};
#[cfg(feature = "remote")]
pub use remote::{RemoteChat, RemoteEmbedder};
pub use repair::{chat_with_repair, chat_with_validation, JsonObject};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("embedding input {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// Which prompt template produced a request. Lets the mock answer in the
/// right shape and labels transcript entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    AttributeExtraction,
    WindowDesign,
    Rerank,
    Feedback,
    NormDetection,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub kind: PromptKind,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(kind: PromptKind, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            kind,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_decoding(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(Error::EmptyInput("chat prompt"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Invalid(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Invalid("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub trait ChatModel: Send + Sync {
    /// Raw model text for one request.
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingModel: Send + Sync {
    fn dimension(&self) -> usize;

    /// One unit vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError>;
}

impl<T: ChatModel + ?Sized> ChatModel for &T {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: ChatModel + ?Sized> ChatModel for Box<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: EmbeddingModel + ?Sized> EmbeddingModel for Box<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Rejects empty strings before any backend sees them.
pub(crate) fn check_embed_inputs(texts: &[&str]) -> Result<(), ProviderError> {
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(index) => Err(ProviderError::EmptyText { index }),
        None => Ok(()),
    }
}

/// Embeds and verifies the output count and dimension.
pub fn embed_checked(model: &dyn EmbeddingModel, texts: &[&str]) -> Result<Vec<Embedding>> {
    check_embed_inputs(texts)?;
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let out = model.embed(texts)?;
    if out.len() != texts.len() {
        return Err(Error::Invalid(format!(
            "embedder returned {} vectors for {} inputs",
            out.len(),
            texts.len()
        )));
    }
    let expected = model.dimension();
    if let Some(bad) = out.iter().find(|e| e.dim() != expected) {
        return Err(ProviderError::DimensionMismatch {
            expected,
            found: bad.dim(),
        }
        .into());
    }
    Ok(out)
}

/// Decoding and retry settings shared by every structured call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallOptions {
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_limit: usize,
}

impl Default for CallOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            retry_limit: 2,
        }
    }
}

impl CallOptions {
    pub fn request(&self, kind: PromptKind, system: impl Into<String>, user: impl Into<String>) -> ChatRequest {
        ChatRequest::new(kind, system, user).with_decoding(self.temperature, self.max_tokens)
    }
}

/// A chat model and an embedding model used together.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub chat: &'a dyn ChatModel,
    pub embedder: &'a dyn EmbeddingModel,
}

impl<'a> Models<'a> {
    pub fn new(chat: &'a dyn ChatModel, embedder: &'a dyn EmbeddingModel) -> Self {
        Self { chat, embedder }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteChatApi,
    #[default]
    Mock,
}

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_API_KEY_ENV: &str = "DIALNORM_API_KEY";

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_dimension() -> usize {
    256
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    /// Chat completions endpoint, e.g. `https://host/v1/chat/completions`.
    #[serde(default)]
    pub chat_url: Option<String>,
    /// Embeddings endpoint, e.g. `https://host/v1/embeddings`.
    #[serde(default)]
    pub embed_url: Option<String>,
    #[serde(default)]
    pub chat_model: Option<String>,
    #[serde(default)]
    pub embed_model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Embedding dimension d, fixed per run.
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Client-side rate limit for remote calls; unlimited when absent.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default)]
    pub mock_embedding: MockEmbeddingMode,
    #[serde(default)]
    pub mock_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            chat_url: None,
            embed_url: None,
            chat_model: None,
            embed_model: None,
            api_key_env: default_api_key_env(),
            dimension: default_dimension(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            requests_per_second: None,
            mock_embedding: MockEmbeddingMode::default(),
            mock_seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("provider.{field}"),
                message: message.to_string(),
            })
        };
        if self.dimension == 0 {
            return bad("dimension", "must be positive");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature", "must be >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be positive");
        }
        if let Some(rps) = self.requests_per_second {
            if rps.is_nan() || rps <= 0.0 {
                return bad("requests_per_second", "must be positive");
            }
        }
        if self.kind == ProviderKind::RemoteChatApi {
            for (field, v) in [
                ("chat_url", &self.chat_url),
                ("embed_url", &self.embed_url),
                ("chat_model", &self.chat_model),
                ("embed_model", &self.embed_model),
            ] {
                if v.as_deref().is_none_or(|s| s.trim().is_empty()) {
                    return bad(field, "required for remote_chat_api");
                }
            }
        }
        Ok(())
    }

    /// A request carrying this config's decoding parameters.
    pub fn request(&self, kind: PromptKind, system: impl Into<String>, user: impl Into<String>) -> ChatRequest {
        ChatRequest::new(kind, system, user).with_decoding(self.temperature, self.max_tokens)
    }
}

/// Instantiates the configured backends. `script` only applies to the mock.
pub fn build_models(
    cfg: &ProviderConfig,
    script: Option<MockScript>,
) -> Result<(Box<dyn ChatModel>, Box<dyn EmbeddingModel>)> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::Mock => {
            let chat = match script {
                Some(s) => MockChat::from_script(s),
                None => MockChat::new(),
            };
            let embedder = MockEmbedder::new(cfg.dimension, cfg.mock_seed, cfg.mock_embedding);
            Ok((Box::new(chat), Box::new(embedder)))
        }
        #[cfg(feature = "remote")]
        ProviderKind::RemoteChatApi => {
            let chat = RemoteChat::from_config(cfg)?;
            let embedder = RemoteEmbedder::from_config(cfg)?;
            Ok((Box::new(chat), Box::new(embedder)))
        }
        #[cfg(not(feature = "remote"))]
        ProviderKind::RemoteChatApi => Err(ProviderError::Unsupported(
            "built without the `remote` feature".into(),
        )
        .into()),
    }
}
