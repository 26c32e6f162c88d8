//! Open-vocabulary labeling and segmentation metrics.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::fusion::Object3D;
use crate::gateway::{GatewayError, LanguageGateway};
use crate::geometry::Vec3;

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of {}.";
pub const DEFAULT_MATCH_RADIUS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("embedding dimension {got} does not match prompt dimension {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("no ground-truth instances")]
    EmptyGt,
    #[error("no predictions")]
    EmptyPredictions,
    #[error("no ground-truth point lies within the match radius of a prediction")]
    NoAssociations,
    #[error("prompt template must contain exactly one '{{}}' placeholder: {0:?}")]
    BadTemplate(String),
    #[error("{classes} classes but {embeddings} embeddings")]
    CountMismatch { classes: usize, embeddings: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn fill_template(template: &str, class: &str) -> Result<String, LabelError> {
    if template.matches("{}").count() != 1 {
        return Err(LabelError::BadTemplate(template.to_string()));
    }
    Ok(template.replacen("{}", class, 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextPromptSet {
    pub classes: Vec<String>,
    pub prompt_template: String,
    pub embeddings: Vec<Vec<f32>>,
}

impl TextPromptSet {
    pub fn new(
        classes: Vec<String>,
        prompt_template: &str,
        embeddings: Vec<Vec<f32>>,
    ) -> Result<Self, LabelError> {
        fill_template(prompt_template, "x")?;
        if classes.len() != embeddings.len() {
            return Err(LabelError::CountMismatch {
                classes: classes.len(),
                embeddings: embeddings.len(),
            });
        }
        if let Some(first) = embeddings.first() {
            if let Some(bad) = embeddings.iter().find(|e| e.len() != first.len()) {
                return Err(LabelError::DimMismatch {
                    got: bad.len(),
                    want: first.len(),
                });
            }
        }
        Ok(Self {
            classes,
            prompt_template: prompt_template.to_string(),
            embeddings,
        })
    }

    /// Embeds `template(class)` for every class through the gateway.
    pub fn embed(
        classes: Vec<String>,
        prompt_template: &str,
        gateway: &dyn LanguageGateway,
    ) -> Result<Self, LabelError> {
        let embeddings = classes
            .iter()
            .map(|c| {
                let prompt = fill_template(prompt_template, c)?;
                Ok(gateway.embed_text(&prompt)?)
            })
            .collect::<Result<Vec<_>, LabelError>>()?;
        Self::new(classes, prompt_template, embeddings)
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(|e| e.len())
    }

    /// Keeps only the listed classes, preserving their order here.
    pub fn restrict(&self, keep: &[String]) -> Self {
        let (classes, embeddings) = self
            .classes
            .iter()
            .zip(&self.embeddings)
            .filter(|(c, _)| keep.contains(c))
            .map(|(c, e)| (c.clone(), e.clone()))
            .unzip();
        Self {
            classes,
            prompt_template: self.prompt_template.clone(),
            embeddings,
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Argmax cosine class; ties go to the lowest index.
pub fn best_class(embedding: &[f32], prompts: &TextPromptSet) -> Result<(usize, f64), LabelError> {
    let want = prompts.dim().ok_or(LabelError::CountMismatch {
        classes: 0,
        embeddings: 0,
    })?;
    if embedding.len() != want {
        return Err(LabelError::DimMismatch {
            got: embedding.len(),
            want,
        });
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, e) in prompts.embeddings.iter().enumerate() {
        let s = cosine(embedding, e);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObject {
    pub object: Object3D,
    pub label_index: usize,
    pub score: f64,
}

pub fn assign_labels(
    objects: &[Object3D],
    prompts: &TextPromptSet,
) -> Result<Vec<LabeledObject>, LabelError> {
    objects
        .iter()
        .map(|o| {
            let (label_index, score) = best_class(&o.embedding, prompts)?;
            Ok(LabeledObject {
                object: o.clone(),
                label_index,
                score,
            })
        })
        .collect()
}

/// Ground-truth instance summary used for label transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub centroid: Vec3,
    pub class: usize,
}

/// For each prediction, the class of the ground-truth instance with the
/// nearest centroid (ties to the lowest index).
pub fn transfer_labels(
    pred: &[LabeledObject],
    gt: &[GtInstance],
) -> Result<Vec<(u32, usize)>, LabelError> {
    if gt.is_empty() {
        return Err(LabelError::EmptyGt);
    }
    if pred.is_empty() {
        return Err(LabelError::EmptyPredictions);
    }
    Ok(pred
        .iter()
        .map(|p| {
            let c = p.object.centroid();
            let mut best = (0usize, f64::INFINITY);
            for (i, g) in gt.iter().enumerate() {
                let d = (g.centroid - c).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            (p.object.id, gt[best.0].class)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMetrics {
    pub macc: f64,
    pub miou: f64,
    pub fmiou: f64,
    pub per_class_iou: BTreeMap<usize, f64>,
    pub per_class_acc: BTreeMap<usize, f64>,
    /// GT points with no prediction inside the match radius.
    pub unmatched_gt: usize,
}

/// Nearest-neighbor lookup over prediction points on a uniform grid with
/// cell size equal to the search radius.
struct PointGrid<'a> {
    points: &'a [(Vec3, usize)],
    radius: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [(Vec3, usize)], radius: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, (p, _)) in points.iter().enumerate() {
            cells.entry(Self::cell(p, radius)).or_default().push(i as u32);
        }
        Self {
            points,
            radius,
            cells,
        }
    }

    fn cell(p: &Vec3, r: f64) -> [i64; 3] {
        [
            (p.x / r).floor() as i64,
            (p.y / r).floor() as i64,
            (p.z / r).floor() as i64,
        ]
    }

    /// Nearest point within the radius; ties to the lowest index.
    fn nearest(&self, q: &Vec3) -> Option<usize> {
        let c = Self::cell(q, self.radius);
        let r2 = self.radius * self.radius;
        let mut best: Option<(f64, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &i in list {
                        let d = (self.points[i as usize].0 - q).norm_squared();
                        if d <= r2 && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                            best = Some((d, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i as usize)
    }
}

/// Point-level segmentation metrics.
///
/// Every ground-truth point takes the class of its nearest predicted point
/// within `match_radius`; ground-truth points without one count as false
/// negatives of their class. `IoU_c = TP / (TP + FP + FN)`; means run over
/// classes present in the ground truth and `fmIoU` weights by GT frequency.
pub fn compute_metrics(
    pred: &[(Vec3, usize)],
    gt: &[(Vec3, usize)],
    match_radius: f64,
) -> Result<SegMetrics, LabelError> {
    if gt.is_empty() {
        return Err(LabelError::EmptyGt);
    }
    let grid = PointGrid::new(pred, match_radius);
    let assigned: Vec<Option<usize>> = gt
        .iter()
        .map(|(p, _)| grid.nearest(p).map(|i| pred[i].1))
        .collect();
    if assigned.iter().all(|a| a.is_none()) {
        return Err(LabelError::NoAssociations);
    }
    Ok(metrics_from_assignment(gt, &assigned))
}

/// Metrics from GT classes and the predicted class of each GT point.
pub fn metrics_from_assignment(gt: &[(Vec3, usize)], assigned: &[Option<usize>]) -> SegMetrics {
    let mut gt_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unmatched = 0;
    for ((_, g), a) in gt.iter().zip(assigned) {
        *gt_count.entry(*g).or_default() += 1;
        match a {
            Some(p) if p == g => *tp.entry(*g).or_default() += 1,
            Some(p) => *fp.entry(*p).or_default() += 1,
            None => unmatched += 1,
        }
    }
    let total = gt.len() as f64;
    let mut per_class_iou = BTreeMap::new();
    let mut per_class_acc = BTreeMap::new();
    let (mut miou, mut macc, mut fmiou) = (0.0, 0.0, 0.0);
    for (&c, &n) in &gt_count {
        let t = tp.get(&c).copied().unwrap_or(0) as f64;
        let f_p = fp.get(&c).copied().unwrap_or(0) as f64;
        let f_n = n as f64 - t;
        let iou = t / (t + f_p + f_n);
        let acc = t / n as f64;
        per_class_iou.insert(c, iou);
        per_class_acc.insert(c, acc);
        miou += iou;
        macc += acc;
        fmiou += n as f64 / total * iou;
    }
    let k = gt_count.len() as f64;
    SegMetrics {
        macc: macc / k,
        miou: miou / k,
        fmiou,
        per_class_iou,
        per_class_acc,
        unmatched_gt: unmatched,
    }
}
