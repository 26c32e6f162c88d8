use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    check_candidates, final_decision, ground_orientation, mine_candidates, structure_query,
    Candidate, Decision, OrientationToken, Reference, RetrievalError, StructuredQuery,
    Verification, ViewParams,
};
use crate::fusion::Object3D;
use crate::gateway::LanguageGateway;
use crate::geometry::{Box3, Frame};
use crate::labeling::{fill_template, DEFAULT_PROMPT_TEMPLATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub top_k: usize,
    pub dedup_overlap: f64,
    pub lambda_occ: f64,
    pub depth_tol: f64,
    pub n_bins: usize,
    pub prompt_template: String,
    /// Skip the yes/no check when false.
    pub verify: bool,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            top_k: 10,
            dedup_overlap: 0.7,
            lambda_occ: 0.5,
            depth_tol: 0.1,
            n_bins: 8,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            verify: true,
        }
    }
}

impl RetrievalParams {
    pub fn view(&self) -> ViewParams {
        ViewParams {
            lambda_occ: self.lambda_occ,
            depth_tol: self.depth_tol,
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidParams(m.into()));
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.dedup_overlap) {
            return bad("dedup_overlap must lie in [0, 1]");
        }
        if !(self.lambda_occ >= 0.0) || !(self.depth_tol > 0.0) {
            return bad("lambda_occ must be >= 0 and depth_tol > 0");
        }
        if self.n_bins < 4 {
            return bad("n_bins must be at least 4");
        }
        fill_template(&self.prompt_template, "x")
            .map_err(|e| RetrievalError::InvalidParams(e.to_string()))?;
        Ok(())
    }
}

/// Gateways for each stage; they may all be the same object.
#[derive(Clone, Copy)]
pub struct GatewaySet<'a> {
    pub parser: &'a dyn LanguageGateway,
    pub embedder: &'a dyn LanguageGateway,
    pub vlm: &'a dyn LanguageGateway,
    pub reasoner: &'a dyn LanguageGateway,
}

impl<'a> GatewaySet<'a> {
    pub fn uniform(g: &'a dyn LanguageGateway) -> Self {
        Self {
            parser: g,
            embedder: g,
            vlm: g,
            reasoner: g,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalOutcome {
    pub query: StructuredQuery,
    /// Every mined candidate with its view and verification state.
    pub candidates: Vec<Candidate>,
    /// Indices into `candidates` that reached the final decision.
    pub survivors: Vec<usize>,
    pub references: Vec<Reference>,
    pub decision: Decision,
    /// Index into `candidates` of the answer.
    pub chosen: usize,
    pub object_id: u32,
    pub predicted_box: Box3,
}

fn embed_phrase(
    phrase: &str,
    params: &RetrievalParams,
    g: &dyn LanguageGateway,
) -> Result<Vec<f32>, RetrievalError> {
    let prompt = fill_template(&params.prompt_template, phrase)
        .map_err(|e| RetrievalError::InvalidParams(e.to_string()))?;
    Ok(g.embed_text(&prompt)?)
}

/// Answers one query against an object map.
pub fn retrieve(
    query: &str,
    objects: &[Object3D],
    frames: &[Frame],
    gateways: GatewaySet<'_>,
    params: &RetrievalParams,
    tile_dir: Option<&Path>,
) -> Result<RetrievalOutcome, RetrievalError> {
    params.validate()?;
    if objects.is_empty() {
        return Err(RetrievalError::NoObjects);
    }
    let sq = structure_query(query, gateways.parser)?;
    let emb = embed_phrase(&sq.main.phrase(), params, gateways.embedder)?;
    let mut candidates = mine_candidates(objects, &emb, params.top_k, params.dedup_overlap)?;
    let vlm = params.verify.then_some(gateways.vlm);
    check_candidates(&mut candidates, frames, &sq.main.name, &params.view(), vlm);
    let survivors: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.verified != Verification::Fail)
        .map(|(i, _)| i)
        .collect();
    if survivors.is_empty() {
        return Err(RetrievalError::NoSurvivors);
    }

    let mut names: Vec<String> = sq.references.clone();
    if let Some(o) = &sq.orientation {
        if !names.contains(&o.anchor) {
            names.push(o.anchor.clone());
        }
    }
    let mut references = Vec::new();
    for name in names {
        let emb = embed_phrase(&name, params, gateways.embedder)?;
        let mined = mine_candidates(objects, &emb, params.top_k, params.dedup_overlap)?;
        let Some(best) = mined.into_iter().next() else {
            continue;
        };
        let is_anchor = sq.orientation.as_ref().is_some_and(|o| o.anchor == name);
        let yaw = if is_anchor {
            match ground_orientation(
                &best,
                frames,
                OrientationToken::Front,
                gateways.vlm,
                params.n_bins,
                params.depth_tol,
                tile_dir,
            ) {
                Ok(y) => Some(y),
                Err(e) => {
                    log::warn!("orientation of {name:?} unresolved: {e}");
                    None
                }
            }
        } else {
            None
        };
        references.push(Reference {
            name,
            centroid: best.object.centroid(),
            yaw,
        });
    }

    let pool: Vec<Candidate> = survivors.iter().map(|&i| candidates[i].clone()).collect();
    let decision = final_decision(&sq, &pool, &references, gateways.reasoner);
    let chosen = survivors[decision.index];
    let object = &candidates[chosen].object;
    Ok(RetrievalOutcome {
        object_id: object.id,
        predicted_box: object.bounding_box(),
        query: sq,
        candidates,
        survivors,
        references,
        decision,
        chosen,
    })
}
