//! Replay logs, recording and response caching.
//!
//! A replay log is `REPLAY_MAGIC`, a little-endian `u32` version, then a
//! sequence of records. Each record is a `u32` length plus canonical request
//! JSON, followed by a `u32` length plus response JSON.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{ChatRequest, GatewayError, GatewayRequest, GatewayResponse, LanguageGateway};

pub const REPLAY_MAGIC: &[u8; 4] = b"OVRL";
const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub request: GatewayRequest,
    pub response: GatewayResponse,
}

fn encode_record(out: &mut Vec<u8>, rec: &ReplayRecord) {
    let req = rec.request.canonical_json();
    let resp = serde_json::to_string(&rec.response).expect("response serializes");
    out.extend_from_slice(&(req.len() as u32).to_le_bytes());
    out.extend_from_slice(req.as_bytes());
    out.extend_from_slice(&(resp.len() as u32).to_le_bytes());
    out.extend_from_slice(resp.as_bytes());
}

pub fn write_replay_log(path: &Path, records: &[ReplayRecord]) -> Result<(), GatewayError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(REPLAY_MAGIC);
    buf.extend_from_slice(&REPLAY_VERSION.to_le_bytes());
    for r in records {
        encode_record(&mut buf, r);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_replay_log(path: &Path) -> Result<Vec<ReplayRecord>, GatewayError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != REPLAY_MAGIC {
        return Err(GatewayError::Log(format!(
            "{}: bad magic",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != REPLAY_VERSION {
        return Err(GatewayError::Log(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mut pos = 8;
    let take = |pos: &mut usize| -> Result<&[u8], GatewayError> {
        if *pos + 4 > bytes.len() {
            return Err(GatewayError::Log(format!(
                "{}: truncated at byte {}",
                path.display(),
                *pos
            )));
        }
        let n = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap()) as usize;
        if *pos + 4 + n > bytes.len() {
            return Err(GatewayError::Log(format!(
                "{}: truncated record at byte {}",
                path.display(),
                *pos
            )));
        }
        let s = &bytes[*pos + 4..*pos + 4 + n];
        *pos += 4 + n;
        Ok(s)
    };
    let mut out = Vec::new();
    while pos < bytes.len() {
        let at = pos;
        let req = take(&mut pos)?;
        let request: GatewayRequest = serde_json::from_slice(req)
            .map_err(|e| GatewayError::Log(format!("{}: byte {at}: {e}", path.display())))?;
        let resp = take(&mut pos)?;
        let response: GatewayResponse = serde_json::from_slice(resp)
            .map_err(|e| GatewayError::Log(format!("{}: byte {at}: {e}", path.display())))?;
        out.push(ReplayRecord { request, response });
    }
    Ok(out)
}

/// Serves recorded responses keyed by request hash. Later records win.
pub struct ReplayGateway {
    responses: HashMap<String, GatewayResponse>,
}

impl ReplayGateway {
    pub fn from_records(records: Vec<ReplayRecord>) -> Self {
        let responses = records
            .into_iter()
            .map(|r| (r.request.hash(), r.response))
            .collect();
        Self { responses }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_records(read_replay_log(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn lookup(&self, req: &GatewayRequest) -> Result<&GatewayResponse, GatewayError> {
        let h = req.hash();
        self.responses.get(&h).ok_or(GatewayError::ReplayMiss(h))
    }
}

impl LanguageGateway for ReplayGateway {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        match self.lookup(&GatewayRequest::Embed {
            prompt: prompt.to_string(),
        })? {
            GatewayResponse::Embedding { vector } => Ok(vector.clone()),
            GatewayResponse::Reply { .. } => {
                Err(GatewayError::Log("embedding request mapped to a chat reply".into()))
            }
        }
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match self.lookup(&GatewayRequest::Chat(request.clone()))? {
            GatewayResponse::Reply { text } => Ok(text.clone()),
            GatewayResponse::Embedding { .. } => {
                Err(GatewayError::Log("chat request mapped to an embedding".into()))
            }
        }
    }
}

/// Appends every successful exchange of the inner gateway to a replay log.
pub struct RecordingGateway<G> {
    inner: G,
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl<G: LanguageGateway> RecordingGateway<G> {
    /// Creates (truncates) the log at `path`.
    pub fn create(inner: G, path: &Path) -> Result<Self, GatewayError> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(REPLAY_MAGIC)?;
        f.write_all(&REPLAY_VERSION.to_le_bytes())?;
        f.flush()?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            writer: Mutex::new(f),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_inner(self) -> G {
        self.inner
    }

    fn append(&self, request: GatewayRequest, response: GatewayResponse) -> Result<(), GatewayError> {
        let mut buf = Vec::new();
        encode_record(&mut buf, &ReplayRecord { request, response });
        let mut w = self.writer.lock().unwrap();
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }
}

impl<G: LanguageGateway> LanguageGateway for RecordingGateway<G> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        let v = self.inner.embed_text(prompt)?;
        self.append(
            GatewayRequest::Embed {
                prompt: prompt.to_string(),
            },
            GatewayResponse::Embedding { vector: v.clone() },
        )?;
        Ok(v)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let reply = self.inner.chat(request)?;
        self.append(
            GatewayRequest::Chat(request.clone()),
            GatewayResponse::Reply {
                text: reply.clone(),
            },
        )?;
        Ok(reply)
    }
}

/// In-memory response cache keyed by request hash.
pub struct CachingGateway<G> {
    inner: G,
    cache: Mutex<HashMap<String, GatewayResponse>>,
}

impl<G: LanguageGateway> CachingGateway<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<G: LanguageGateway> LanguageGateway for CachingGateway<G> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        let key = GatewayRequest::Embed {
            prompt: prompt.to_string(),
        }
        .hash();
        if let Some(GatewayResponse::Embedding { vector }) = self.cache.lock().unwrap().get(&key) {
            return Ok(vector.clone());
        }
        let v = self.inner.embed_text(prompt)?;
        self.cache
            .lock()
            .unwrap()
            .insert(key, GatewayResponse::Embedding { vector: v.clone() });
        Ok(v)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let key = GatewayRequest::Chat(request.clone()).hash();
        if let Some(GatewayResponse::Reply { text }) = self.cache.lock().unwrap().get(&key) {
            return Ok(text.clone());
        }
        let reply = self.inner.chat(request)?;
        self.cache.lock().unwrap().insert(
            key,
            GatewayResponse::Reply {
                text: reply.clone(),
            },
        );
        Ok(reply)
    }
}
