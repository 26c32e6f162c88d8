use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{normalize, ChatExchange, ChatRequest, GatewayError, ImageRef, LanguageGateway, Limiter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    pub chat_model: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            chat_model: "gpt-5-mini".into(),
            embed_model: "EVA02-CLIP-L-14".into(),
            embed_dim: 768,
            timeout_secs: 60.0,
            max_retries: 2,
            auth_env: Some("OVMAP_API_KEY".into()),
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::Transport("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Live chat-completions client.
pub struct HttpGateway {
    config: GatewayConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
    token: Option<String>,
}

impl HttpGateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let token = config
            .auth_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok());
        Ok(Self {
            limiter: Limiter::new(config.max_in_flight),
            config,
            client,
            token,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let _slot = self.limiter.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| GatewayError::Malformed(e.to_string()));
                    }
                    last = format!("{url}: HTTP {status}");
                    if status.is_client_error() && status.as_u16() != 429 {
                        break;
                    }
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            log::warn!("gateway attempt {} failed: {last}", attempt + 1);
        }
        Err(GatewayError::Transport(format!(
            "{last} (after {} attempts)",
            self.config.max_retries + 1
        )))
    }

    /// Sends a chat request and returns the full exchange with latency.
    pub fn exchange(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let start = Instant::now();
        let body = chat_body(request, &self.config.chat_model)?;
        let resp = self.post("chat/completions", &body)?;
        let reply = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        Ok(ChatExchange {
            request: request.clone(),
            reply,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

impl LanguageGateway for HttpGateway {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        let body = json!({ "model": self.config.embed_model, "input": prompt });
        let resp = self.post("embeddings", &body)?;
        let arr = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| GatewayError::Malformed("missing data[0].embedding".into()))?;
        let v: Vec<f32> = arr
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| GatewayError::Malformed("non-numeric embedding".into()))?;
        if v.len() != self.config.embed_dim {
            return Err(GatewayError::DimMismatch {
                got: v.len(),
                want: self.config.embed_dim,
            });
        }
        normalize(v)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.exchange(request).map(|e| e.reply)
    }
}

/// Request body in chat-completions format with images inlined as PNG data
/// URLs.
pub fn chat_body(request: &ChatRequest, default_model: &str) -> Result<Value, GatewayError> {
    let messages = request
        .messages
        .iter()
        .map(|m| {
            let mut parts = vec![json!({ "type": "text", "text": m.text })];
            for img in &m.images {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": { "url": image_data_url(img)? }
                }));
            }
            Ok(json!({ "role": m.role, "content": parts }))
        })
        .collect::<Result<Vec<_>, GatewayError>>()?;
    Ok(json!({
        "model": request.model.as_deref().unwrap_or(default_model),
        "messages": messages,
        "temperature": 0,
    }))
}

fn image_data_url(img: &ImageRef) -> Result<String, GatewayError> {
    let err = |reason: String| GatewayError::Image {
        uri: img.uri.clone(),
        reason,
    };
    if img.uri.starts_with("frame://") {
        return Err(err("no color image available for this frame".into()));
    }
    let mut decoded = image::open(&img.uri).map_err(|e| err(e.to_string()))?;
    if let Some([x0, y0, x1, y1]) = img.bbox {
        let x1 = x1.min(decoded.width());
        let y1 = y1.min(decoded.height());
        if x1 <= x0 || y1 <= y0 {
            return Err(err("empty crop".into()));
        }
        decoded = decoded.crop_imm(x0, y0, x1 - x0, y1 - y0);
    }
    let mut png = Vec::new();
    decoded
        .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| err(e.to_string()))?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}
