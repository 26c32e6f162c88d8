//! Uniform access to text-embedding, LLM and VLM services.
//!
//! Every model call in the pipeline goes through [`LanguageGateway`]. The
//! live implementation speaks a chat-completions style HTTP protocol; mocks
//! and replay logs make runs deterministic without network access.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mask::PixelRect;

mod http;
mod mock;
mod replay;

pub use http::{GatewayConfig, HttpGateway};
pub use mock::{hash_embedding, MockGateway};
pub use replay::{
    read_replay_log, write_replay_log, CachingGateway, RecordingGateway, ReplayGateway,
    ReplayRecord, REPLAY_MAGIC,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("embedding dimension {got} does not match configured {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("no recorded reply for request {0}")]
    ReplayMiss(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("image {uri}: {reason}")]
    Image { uri: String, reason: String },
    #[error("replay log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Image attachment passed by reference; resolved to bytes at send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Filesystem path, or `frame://<id>` when no color image exists.
    pub uri: String,
    /// Optional crop `[x0, y0, x1, y1)` applied before sending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
}

impl ImageRef {
    pub fn new(uri: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            bbox: None,
        }
    }

    pub fn cropped(uri: impl Into<String>, rect: PixelRect) -> Self {
        Self {
            uri: uri.into(),
            bbox: Some([rect.x0, rect.y0, rect.x1, rect.y1]),
        }
    }

    pub fn frame_placeholder(frame_id: u32) -> String {
        format!("frame://{frame_id}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<ImageRef>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Model override; `None` uses the gateway default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            model: None,
            messages,
        }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    /// Concatenated text of all user messages.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A completed chat call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub reply: String,
    pub latency_ms: u64,
}

/// Serializable form of any gateway call; its hash keys caches and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayRequest {
    Embed { prompt: String },
    Chat(ChatRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayResponse {
    Embedding { vector: Vec<f32> },
    Reply { text: String },
}

impl GatewayRequest {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub trait LanguageGateway: Send + Sync {
    /// Unit-norm text embedding.
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError>;

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<G: LanguageGateway + ?Sized> LanguageGateway for Box<G> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        (**self).embed_text(prompt)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).chat(request)
    }
}

impl<G: LanguageGateway + ?Sized> LanguageGateway for std::sync::Arc<G> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        (**self).embed_text(prompt)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).chat(request)
    }
}

/// Forwards to `inner` with every chat request pinned to `model`, so one
/// backend can serve several roles.
pub struct WithModel<'a> {
    pub inner: &'a dyn LanguageGateway,
    pub model: String,
}

impl<'a> WithModel<'a> {
    pub fn new(inner: &'a dyn LanguageGateway, model: impl Into<String>) -> Self {
        Self {
            inner,
            model: model.into(),
        }
    }
}

impl LanguageGateway for WithModel<'_> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        self.inner.embed_text(prompt)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut r = request.clone();
        r.model = Some(self.model.clone());
        self.inner.chat(&r)
    }
}

pub(crate) fn normalize(v: Vec<f32>) -> Result<Vec<f32>, GatewayError> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(GatewayError::Malformed("embedding has zero norm".into()));
    }
    Ok(v.into_iter().map(|x| (x as f64 / n) as f32).collect())
}

/// Counting semaphore capping concurrent in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    max: usize,
    in_flight: std::sync::Mutex<usize>,
    cv: std::sync::Condvar,
}

impl Limiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: std::sync::Mutex::new(0),
            cv: std::sync::Condvar::new(),
        }
    }

    pub fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        LimiterGuard { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

pub struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap();
        *n -= 1;
        self.limiter.cv.notify_one();
    }
}
