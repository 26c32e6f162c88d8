use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::gateway::{ChatMessage, ChatRequest, LanguageGateway};

pub const STRUCTURE_PROMPT: &str = include_str!("../../prompts/structure_query.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationToken {
    Front,
    Back,
    Left,
    Right,
    Facing,
}

impl OrientationToken {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Front => "front",
            Self::Back => "back",
            Self::Left => "left",
            Self::Right => "right",
            Self::Facing => "facing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainObject {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl MainObject {
    /// Attributes followed by the name, e.g. `"wooden chair"`.
    pub fn phrase(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.name);
        words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub anchor: String,
    pub tokens: Vec<OrientationToken>,
}

impl Orientation {
    pub fn has(&self, token: OrientationToken) -> bool {
        self.tokens.contains(&token)
    }
}

/// A query split into main object, references and viewpoint constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub main: MainObject,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default)]
    pub orientation: Option<Orientation>,
    #[serde(default)]
    pub raw: String,
}

impl StructuredQuery {
    pub fn validate(&self) -> Result<(), String> {
        if self.main.name.trim().is_empty() {
            return Err("main object name is empty".into());
        }
        if let Some(o) = &self.orientation {
            if o.anchor.trim().is_empty() {
                return Err("orientation anchor is empty".into());
            }
            if o.tokens.is_empty() {
                return Err("orientation has no tokens".into());
            }
        }
        Ok(())
    }
}

/// Parses a model reply into a query. Tolerates code fences and prose
/// around the JSON object.
pub fn parse_structured(reply: &str, raw: &str) -> Result<StructuredQuery, String> {
    let start = reply.find('{').ok_or("no JSON object in reply")?;
    let end = reply.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    let mut q: StructuredQuery =
        serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())?;
    q.raw = raw.to_string();
    q.main.name = q.main.name.trim().to_lowercase();
    q.validate()?;
    Ok(q)
}

pub fn structure_request(query: &str) -> ChatRequest {
    ChatRequest::new(vec![
        ChatMessage::system(STRUCTURE_PROMPT.trim_end()),
        ChatMessage::user(format!("Query: {query}")),
    ])
}

/// Asks the gateway to structure `query`; a malformed reply is retried once
/// with the parse error appended to the conversation.
pub fn structure_query(
    query: &str,
    parser: &dyn LanguageGateway,
) -> Result<StructuredQuery, RetrievalError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(RetrievalError::ParseFailure {
            query: String::new(),
            reason: "empty query".into(),
        });
    }
    let mut request = structure_request(query);
    let first = parser.chat(&request)?;
    let reason = match parse_structured(&first, query) {
        Ok(q) => return Ok(q),
        Err(e) => e,
    };
    log::debug!("query parse failed ({reason}), retrying");
    request.messages.push(ChatMessage {
        role: crate::gateway::Role::Assistant,
        text: first,
        images: Vec::new(),
    });
    request.messages.push(ChatMessage::user(format!(
        "That reply was invalid: {reason}. Reply with the JSON object only."
    )));
    let second = parser.chat(&request)?;
    parse_structured(&second, query).map_err(|reason| RetrievalError::ParseFailure {
        query: query.to_string(),
        reason,
    })
}
