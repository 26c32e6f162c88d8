use super::{Candidate, StructuredQuery};
use crate::gateway::{ChatMessage, ChatRequest, LanguageGateway, Role};
use crate::geometry::Vec3;

pub const DECISION_PROMPT: &str = include_str!("../../prompts/final_decision.v1.txt");

/// A resolved reference object.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub name: String,
    pub centroid: Vec3,
    pub yaw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionSource {
    /// Only one candidate survived.
    Forced,
    Gateway,
    /// The gateway failed or replied out of range twice; highest similarity
    /// was used.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub index: usize,
    pub source: DecisionSource,
}

/// First unsigned integer in the reply.
pub fn parse_index(reply: &str) -> Option<usize> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

fn fmt_vec(v: &Vec3) -> String {
    format!("({:.3}, {:.3}, {:.3})", v.x, v.y, v.z)
}

fn fmt_yaw(yaw: Option<f64>) -> String {
    match yaw {
        Some(y) => format!("{:.1}", y.to_degrees()),
        None => "unknown".into(),
    }
}

pub fn decision_request(
    query: &StructuredQuery,
    candidates: &[Candidate],
    references: &[Reference],
) -> ChatRequest {
    let cands = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let b = c.object.bounding_box();
            format!(
                "candidate {i}: centroid {} extent {} yaw {} similarity {:.4}",
                fmt_vec(&c.object.centroid()),
                fmt_vec(&b.extent()),
                fmt_yaw(c.yaw),
                c.similarity
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let refs = if references.is_empty() {
        "none".to_string()
    } else {
        references
            .iter()
            .map(|r| {
                format!(
                    "reference {}: centroid {} yaw {}",
                    r.name,
                    fmt_vec(&r.centroid),
                    fmt_yaw(r.yaw)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let text = DECISION_PROMPT
        .trim_end()
        .replace("{query}", &query.raw)
        .replace("{main}", &query.main.phrase())
        .replace("{candidates}", &cands)
        .replace("{references}", &refs);
    ChatRequest::new(vec![ChatMessage::user(text)])
}

fn most_similar(candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.similarity > candidates[best].similarity {
            best = i;
        }
    }
    best
}

/// Picks one candidate. Never fails: a gateway error or two out-of-range
/// replies fall back to the most similar candidate.
///
/// Panics if `candidates` is empty.
pub fn final_decision(
    query: &StructuredQuery,
    candidates: &[Candidate],
    references: &[Reference],
    llm: &dyn LanguageGateway,
) -> Decision {
    assert!(!candidates.is_empty(), "final_decision needs a candidate");
    if candidates.len() == 1 {
        return Decision {
            index: 0,
            source: DecisionSource::Forced,
        };
    }
    let fallback = Decision {
        index: most_similar(candidates),
        source: DecisionSource::Fallback,
    };
    let in_range = |reply: &str| parse_index(reply).filter(|&i| i < candidates.len());
    let mut request = decision_request(query, candidates, references);
    let first = match llm.chat(&request) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("final decision fell back: {e}");
            return fallback;
        }
    };
    if let Some(index) = in_range(&first) {
        return Decision {
            index,
            source: DecisionSource::Gateway,
        };
    }
    request.messages.push(ChatMessage {
        role: Role::Assistant,
        text: first,
        images: Vec::new(),
    });
    request.messages.push(ChatMessage::user(format!(
        "That reply was invalid. Reply with a single integer from 0 to {}.",
        candidates.len() - 1
    )));
    match llm.chat(&request) {
        Ok(second) => match in_range(&second) {
            Some(index) => Decision {
                index,
                source: DecisionSource::Gateway,
            },
            None => fallback,
        },
        Err(e) => {
            log::warn!("final decision fell back: {e}");
            fallback
        }
    }
}
