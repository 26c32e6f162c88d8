use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError, LanguageGateway};

/// Deterministic unit vector seeded by `(seed, prompt)`.
pub fn hash_embedding(seed: u64, prompt: &str, dim: usize) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.into_iter().map(|x| (x / n) as f32).collect()
}

/// Offline gateway: hash-seeded embeddings and scripted chat replies.
///
/// Rules are tried in insertion order against the concatenated user text;
/// the first matching pattern's reply is returned.
pub struct MockGateway {
    dim: usize,
    seed: u64,
    fixed: HashMap<String, Vec<f32>>,
    rules: Vec<(Regex, String)>,
    default_reply: Option<String>,
    cache: Mutex<HashMap<String, Vec<f32>>>,
    embed_calls: AtomicUsize,
    chat_calls: AtomicUsize,
}

impl MockGateway {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            fixed: HashMap::new(),
            rules: Vec::new(),
            default_reply: None,
            cache: Mutex::new(HashMap::new()),
            embed_calls: AtomicUsize::new(0),
            chat_calls: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Pins the embedding returned for one prompt.
    pub fn with_embedding(mut self, prompt: &str, vector: Vec<f32>) -> Self {
        self.fixed.insert(prompt.to_string(), vector);
        self
    }

    pub fn with_rule(mut self, pattern: &str, reply: &str) -> Self {
        self.rules
            .push((Regex::new(pattern).expect("valid rule pattern"), reply.to_string()));
        self
    }

    pub fn with_default_reply(mut self, reply: &str) -> Self {
        self.default_reply = Some(reply.to_string());
        self
    }

    /// Number of embeddings actually computed (cache misses).
    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }
}

impl LanguageGateway for MockGateway {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        if let Some(v) = self.cache.lock().unwrap().get(prompt) {
            return Ok(v.clone());
        }
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        let v = match self.fixed.get(prompt) {
            Some(v) if v.len() != self.dim => {
                return Err(GatewayError::DimMismatch {
                    got: v.len(),
                    want: self.dim,
                })
            }
            Some(v) => super::normalize(v.clone())?,
            None => hash_embedding(self.seed, prompt, self.dim),
        };
        self.cache
            .lock()
            .unwrap()
            .insert(prompt.to_string(), v.clone());
        Ok(v)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let text = request.user_text();
        for (re, reply) in &self.rules {
            if re.is_match(&text) {
                return Ok(reply.clone());
            }
        }
        self.default_reply
            .clone()
            .ok_or_else(|| GatewayError::Malformed("no scripted reply matches".into()))
    }
}
