//! Language-grounded object retrieval over a fused object map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Object3D;
use crate::gateway::{ChatMessage, ChatRequest, GatewayError, ImageRef, LanguageGateway};
use crate::geometry::{box_iou3d, project_with, Box3, Frame};
use crate::labeling::cosine;
use crate::mask::PixelRect;

mod decision;
mod orientation;
mod pipeline;
mod query;

pub use decision::{
    decision_request, final_decision, parse_index, Decision, DecisionSource, Reference,
    DECISION_PROMPT,
};
pub use orientation::{
    bin_center, bin_of, camera_yaw, compose_grid, ground_orientation, orientation_request,
    orientation_views, OrientationView, ORIENTATION_PROMPT,
};
pub use pipeline::{retrieve, GatewaySet, RetrievalOutcome, RetrievalParams};
pub use query::{
    parse_structured, structure_query, structure_request, MainObject, Orientation,
    OrientationToken, StructuredQuery, STRUCTURE_PROMPT,
};

pub const VERIFY_PROMPT: &str = include_str!("../../prompts/verify_candidate.v1.txt");
pub const GROUNDING_THRESHOLDS: [f64; 2] = [0.1, 0.25];

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("could not structure query {query:?}: {reason}")]
    ParseFailure { query: String, reason: String },
    #[error("object map is empty")]
    NoObjects,
    #[error("object {0} is not visible in any frame")]
    NeverVisible(u32),
    #[error("only {bins} orientation bin(s) have a view")]
    InsufficientViews { bins: usize },
    #[error("no candidate passed verification")]
    NoSurvivors,
    #[error("no grounding results")]
    EmptyResults,
    #[error("unusable reply {reply:?}: {reason}")]
    BadReply { reply: String, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("frame {0} not found")]
    MissingFrame(u32),
    #[error("frame {0} has no color image")]
    MissingColor(u32),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{}: {msg}", path.display())]
    TileWrite {
        path: std::path::PathBuf,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verification {
    #[default]
    Unchecked,
    Pass,
    Fail,
}

/// Frame chosen to show a candidate, with the tight box of its visible
/// projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub frame_id: u32,
    pub bbox: PixelRect,
    pub score: f64,
    pub visible_fraction: f64,
    pub occluder_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub object: Object3D,
    pub similarity: f64,
    pub best_view: Option<View>,
    pub verified: Verification,
    /// Front-facing direction about +z, in `[0, 2π)`.
    pub yaw: Option<f64>,
}

impl Candidate {
    pub fn new(object: Object3D, similarity: f64) -> Self {
        Self {
            object,
            similarity,
            best_view: None,
            verified: Verification::Unchecked,
            yaw: None,
        }
    }
}

/// Ranks `objects` by cosine similarity to `text_embed`, keeps the top `k`
/// (ties by input order) and drops any candidate whose voxel overlap with a
/// candidate holding strictly more voxels exceeds `dedup_overlap`.
pub fn mine_candidates(
    objects: &[Object3D],
    text_embed: &[f32],
    k: usize,
    dedup_overlap: f64,
) -> Result<Vec<Candidate>, RetrievalError> {
    if objects.is_empty() {
        return Err(RetrievalError::NoObjects);
    }
    if k == 0 {
        return Err(RetrievalError::InvalidParams("top-k must be at least 1".into()));
    }
    let mut ranked: Vec<(usize, f64)> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| (i, cosine(&o.embedding, text_embed).clamp(-1.0, 1.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);

    let keep: Vec<bool> = ranked
        .iter()
        .map(|&(i, _)| {
            let small = &objects[i].voxels;
            !ranked.iter().any(|&(j, _)| {
                let large = &objects[j].voxels;
                large.len() > small.len()
                    && small.intersection_count(large) as f64 / small.len() as f64 > dedup_overlap
            })
        })
        .collect();
    Ok(ranked
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((i, s), _)| Candidate::new(objects[i].clone(), s))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    pub lambda_occ: f64,
    /// Meters between projected depth and the frame's depth map.
    pub depth_tol: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self {
            lambda_occ: 0.5,
            depth_tol: 0.1,
        }
    }
}

/// Visibility of `points` in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVisibility {
    pub visible_fraction: f64,
    pub occluder_fraction: f64,
    pub bbox: Option<PixelRect>,
}

/// Scores one frame. A point is visible when it projects in bounds and its
/// camera depth agrees with the depth map within `depth_tol`. It is occluded
/// when some point of `others` lands on the same pixel more than `depth_tol`
/// closer to the camera; the occluder fraction is taken over in-bounds
/// points.
pub fn frame_visibility(
    points: &[crate::geometry::Vec3],
    frame: &Frame,
    others: &[&[crate::geometry::Vec3]],
    depth_tol: f64,
) -> FrameVisibility {
    let k = &frame.intrinsics;
    let (w, h) = (k.width as i64, k.height as i64);
    let pixel = |p: &crate::geometry::Vec3| -> Option<(usize, f64, u32, u32)> {
        let ([u, v], z) = project_with(p, k, &frame.pose).ok()?;
        let (pu, pv) = (u.floor() as i64, v.floor() as i64);
        if pu < 0 || pv < 0 || pu >= w || pv >= h {
            return None;
        }
        Some(((pv * w + pu) as usize, z, pu as u32, pv as u32))
    };

    let mut zbuf: Vec<f64> = Vec::new();
    if !others.is_empty() {
        zbuf = vec![f64::INFINITY; (w * h) as usize];
        for pts in others {
            for p in pts.iter() {
                if let Some((i, z, _, _)) = pixel(p) {
                    if z < zbuf[i] {
                        zbuf[i] = z;
                    }
                }
            }
        }
    }

    let (mut visible, mut in_bounds, mut occluded) = (0usize, 0usize, 0usize);
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for p in points {
        let Some((i, z, u, v)) = pixel(p) else {
            continue;
        };
        in_bounds += 1;
        if !zbuf.is_empty() && zbuf[i] < z - depth_tol {
            occluded += 1;
        }
        if let Some(d) = frame.depth.valid_at(u, v) {
            if (z - d).abs() <= depth_tol {
                visible += 1;
                x0 = x0.min(u);
                y0 = y0.min(v);
                x1 = x1.max(u + 1);
                y1 = y1.max(v + 1);
            }
        }
    }
    let n = points.len().max(1) as f64;
    FrameVisibility {
        visible_fraction: visible as f64 / n,
        occluder_fraction: if in_bounds == 0 {
            0.0
        } else {
            occluded as f64 / in_bounds as f64
        },
        bbox: (visible > 0).then_some(PixelRect { x0, y0, x1, y1 }),
    }
}

/// Picks the frame maximizing `visible - lambda_occ * occluded`. Ties go to
/// the earlier frame.
pub fn select_view(
    cand: &Candidate,
    frames: &[Frame],
    others: &[&Candidate],
    params: &ViewParams,
) -> Result<View, RetrievalError> {
    let other_pts: Vec<&[crate::geometry::Vec3]> =
        others.iter().map(|c| c.object.points.as_slice()).collect();
    let mut best: Option<View> = None;
    for frame in frames {
        let vis = frame_visibility(&cand.object.points, frame, &other_pts, params.depth_tol);
        let Some(bbox) = vis.bbox else {
            continue;
        };
        let score = vis.visible_fraction - params.lambda_occ * vis.occluder_fraction;
        if best.is_none_or(|b| score > b.score) {
            best = Some(View {
                frame_id: frame.id,
                bbox,
                score,
                visible_fraction: vis.visible_fraction,
                occluder_fraction: vis.occluder_fraction,
            });
        }
    }
    best.ok_or(RetrievalError::NeverVisible(cand.object.id))
}

/// Image reference for a frame region: the color image when the frame has
/// one, a `frame://` placeholder otherwise.
pub fn frame_image(frame: &Frame, bbox: Option<PixelRect>) -> ImageRef {
    let uri = match &frame.rgb_path {
        Some(p) => p.to_string_lossy().into_owned(),
        None => ImageRef::frame_placeholder(frame.id),
    };
    ImageRef {
        uri,
        bbox: bbox.map(|r| [r.x0, r.y0, r.x1, r.y1]),
    }
}

pub fn verify_request(frame: &Frame, view: &View, name: &str) -> ChatRequest {
    let text = VERIFY_PROMPT.trim_end().replace("{name}", name);
    ChatRequest::new(vec![
        ChatMessage::user(text).with_images(vec![frame_image(frame, Some(view.bbox))])
    ])
}

/// Reads a yes/no reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Asks whether the cropped view shows a `name`. Errors leave the caller to
/// keep the candidate unchecked.
pub fn verify_candidate(
    view: &View,
    frame: &Frame,
    name: &str,
    vlm: &dyn LanguageGateway,
) -> Result<bool, RetrievalError> {
    let reply = vlm.chat(&verify_request(frame, view, name))?;
    parse_yes_no(&reply).ok_or_else(|| RetrievalError::BadReply {
        reply,
        reason: "expected yes or no".into(),
    })
}

/// Runs view selection and verification for every candidate concurrently.
/// Candidates that fail either step stay unchecked.
pub fn check_candidates(
    candidates: &mut [Candidate],
    frames: &[Frame],
    name: &str,
    params: &ViewParams,
    vlm: Option<&dyn LanguageGateway>,
) {
    let snapshot: Vec<Candidate> = candidates.to_vec();
    candidates.par_iter_mut().enumerate().for_each(|(i, cand)| {
        let others: Vec<&Candidate> = snapshot
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, c)| c)
            .collect();
        let view = match select_view(cand, frames, &others, params) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("candidate {}: {e}", cand.object.id);
                return;
            }
        };
        cand.best_view = Some(view);
        let Some(vlm) = vlm else {
            return;
        };
        let frame = frames
            .iter()
            .find(|f| f.id == view.frame_id)
            .expect("view frame exists");
        match verify_candidate(&view, frame, name, vlm) {
            Ok(true) => cand.verified = Verification::Pass,
            Ok(false) => cand.verified = Verification::Fail,
            Err(e) => log::warn!("verification of object {} kept unchecked: {e}", cand.object.id),
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub predicted_box: Box3,
    pub gt_box: Box3,
    pub iou: f64,
    /// `(threshold, iou > threshold)` pairs.
    pub correct_at: Vec<(f64, bool)>,
    pub subsets: Vec<String>,
}

impl GroundingResult {
    pub fn new(predicted_box: Box3, gt_box: Box3, thresholds: &[f64]) -> Self {
        let iou = box_iou3d(&predicted_box, &gt_box);
        Self::from_iou(predicted_box, gt_box, iou, thresholds)
    }

    pub fn from_iou(predicted_box: Box3, gt_box: Box3, iou: f64, thresholds: &[f64]) -> Self {
        Self {
            predicted_box,
            gt_box,
            iou,
            correct_at: thresholds.iter().map(|&t| (t, iou > t)).collect(),
            subsets: Vec::new(),
        }
    }

    pub fn with_subsets(mut self, subsets: Vec<String>) -> Self {
        self.subsets = subsets;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingAccuracy {
    pub count: usize,
    pub overall: Vec<(f64, f64)>,
    pub per_subset: std::collections::BTreeMap<String, (usize, Vec<(f64, f64)>)>,
}

impl GroundingAccuracy {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.overall
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|(_, a)| *a)
    }
}

pub fn grounding_accuracy(
    results: &[GroundingResult],
    thresholds: &[f64],
) -> Result<GroundingAccuracy, RetrievalError> {
    if results.is_empty() {
        return Err(RetrievalError::EmptyResults);
    }
    let rate = |rs: &[&GroundingResult]| -> Vec<(f64, f64)> {
        thresholds
            .iter()
            .map(|&t| {
                let hits = rs.iter().filter(|r| r.iou > t).count();
                (t, hits as f64 / rs.len() as f64)
            })
            .collect()
    };
    let all: Vec<&GroundingResult> = results.iter().collect();
    let mut tags: Vec<&String> = results.iter().flat_map(|r| &r.subsets).collect();
    tags.sort();
    tags.dedup();
    let per_subset = tags
        .into_iter()
        .map(|tag| {
            let rs: Vec<&GroundingResult> =
                results.iter().filter(|r| r.subsets.contains(tag)).collect();
            (tag.clone(), (rs.len(), rate(&rs)))
        })
        .collect();
    Ok(GroundingAccuracy {
        count: results.len(),
        overall: rate(&all),
        per_subset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SourceMask;
    use crate::gateway::MockGateway;
    use crate::geometry::{DepthMap, Intrinsics, Pose, Vec3};

    fn object(id: u32, points: Vec<Vec3>, emb: Vec<f32>) -> Object3D {
        let src = SourceMask {
            frame_id: 0,
            mask_index: id,
            fragment: 0,
        };
        Object3D::new(id, points, emb, src, 0.05).unwrap()
    }

    fn cube(origin: Vec3, n: usize, step: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(origin + Vec3::new(i as f64, j as f64, k as f64) * step);
                }
            }
        }
        out
    }

    #[test]
    fn single_exact_match() {
        let o = object(0, vec![Vec3::zeros()], vec![0.0, 1.0]);
        let c = mine_candidates(&[o], &[0.0, 1.0], 10, 0.7).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_matches_sort() {
        let objs: Vec<Object3D> = (0..5)
            .map(|i| {
                let a = i as f32 * 0.3;
                object(i, cube(Vec3::new(i as f64 * 10.0, 0.0, 0.0), 2, 0.05), vec![a.cos(), a.sin()])
            })
            .collect();
        let c = mine_candidates(&objs, &[1.0, 0.0], 3, 0.7).unwrap();
        let ids: Vec<u32> = c.iter().map(|c| c.object.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn dedup_drops_smaller_overlapping() {
        let big = object(0, cube(Vec3::zeros(), 6, 0.05), vec![0.9, 0.1]);
        let small = object(1, cube(Vec3::zeros(), 3, 0.05), vec![1.0, 0.0]);
        let c = mine_candidates(&[big, small], &[1.0, 0.0], 10, 0.7).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].object.id, 0);
    }

    fn frame(id: u32, depth: f32) -> Frame {
        let k = Intrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        Frame::new(id, DepthMap::filled(64, 48, depth), k, Pose::identity()).unwrap()
    }

    fn plane(z: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in -5..5 {
            for j in -5..5 {
                out.push(Vec3::new(i as f64 * 0.02, j as f64 * 0.02, z));
            }
        }
        out
    }

    #[test]
    fn single_frame_full_view() {
        let c = Candidate::new(object(0, plane(2.0), vec![1.0]), 1.0);
        let v = select_view(&c, &[frame(3, 2.0)], &[], &ViewParams::default()).unwrap();
        assert_eq!(v.frame_id, 3);
        assert_eq!(v.visible_fraction, 1.0);
        assert_eq!(v.bbox, PixelRect { x0: 29, y0: 21, x1: 35, y1: 27 });
    }

    #[test]
    fn occluder_lowers_score() {
        let c = Candidate::new(object(0, plane(2.0), vec![1.0]), 1.0);
        let occ = Candidate::new(object(1, plane(1.0), vec![1.0]), 1.0);
        let f = frame(0, 2.0);
        let p = ViewParams::default();
        let clear = select_view(&c, std::slice::from_ref(&f), &[], &p).unwrap();
        let blocked = select_view(&c, std::slice::from_ref(&f), &[&occ], &p).unwrap();
        assert!(blocked.score < clear.score);
        assert_eq!(blocked.occluder_fraction, 1.0);
    }

    #[test]
    fn behind_camera_never_visible() {
        let c = Candidate::new(object(0, plane(-2.0), vec![1.0]), 1.0);
        assert!(matches!(
            select_view(&c, &[frame(0, 2.0)], &[], &ViewParams::default()),
            Err(RetrievalError::NeverVisible(0))
        ));
    }

    #[test]
    fn verification_replies() {
        let c = Candidate::new(object(0, plane(2.0), vec![1.0]), 1.0);
        let f = frame(0, 2.0);
        let v = select_view(&c, std::slice::from_ref(&f), &[], &ViewParams::default()).unwrap();
        let yes = MockGateway::new(1, 0).with_default_reply("Yes.");
        assert!(verify_candidate(&v, &f, "chair", &yes).unwrap());
        let odd = MockGateway::new(1, 0).with_default_reply("perhaps");
        assert!(matches!(
            verify_candidate(&v, &f, "chair", &odd),
            Err(RetrievalError::BadReply { .. })
        ));
        let req = verify_request(&f, &v, "chair");
        assert_eq!(
            req.user_text(),
            "Is there a chair in this image region? Answer yes or no."
        );
        assert_eq!(req.messages[0].images[0].uri, "frame://0");
    }

    #[test]
    fn accuracy_thresholds() {
        let b = Box3::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let exact = GroundingResult::new(b, b, &GROUNDING_THRESHOLDS);
        let acc = grounding_accuracy(&[exact], &GROUNDING_THRESHOLDS).unwrap();
        assert_eq!(acc.overall, vec![(0.1, 1.0), (0.25, 1.0)]);
        let mid = GroundingResult::from_iou(b, b, 0.15, &GROUNDING_THRESHOLDS)
            .with_subsets(vec!["hard".into()]);
        assert_eq!(mid.correct_at, vec![(0.1, true), (0.25, false)]);
        let acc = grounding_accuracy(&[mid], &GROUNDING_THRESHOLDS).unwrap();
        assert_eq!(acc.at(0.25), Some(0.0));
        assert_eq!(acc.per_subset["hard"].0, 1);
        assert!(matches!(
            grounding_accuracy(&[], &GROUNDING_THRESHOLDS),
            Err(RetrievalError::EmptyResults)
        ));
    }
}
