//! End-to-end runs over a loaded scene: fusion, segmentation evaluation and
//! retrieval evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::context_embedding::{aggregate_embedding, EmbeddingError};
use crate::fusion::{fuse_scene, FusionError, Observation, Reembedder};
use crate::gateway::LanguageGateway;
use crate::geometry::Vec3;
use crate::io::{IoError, ObjectMap, QueryRecord, ResultRecord, Scene};
use crate::labeling::{
    assign_labels, compute_metrics, metrics_from_assignment, transfer_labels, GtInstance,
    LabelError, SegMetrics, TextPromptSet,
};
use crate::mask_refinement::{refine_frame, RefineError};
use crate::retrieval::{
    grounding_accuracy, retrieve, GatewaySet, GroundingAccuracy, GroundingResult,
    RetrievalError, GROUNDING_THRESHOLDS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame {frame}: {source}")]
    Refine { frame: u32, source: RefineError },
    #[error("frame {frame} mask {mask}: {source}")]
    Embedding {
        frame: u32,
        mask: usize,
        source: EmbeddingError,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    Missing(String),
}

/// Counters from one fusion run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuseStats {
    pub frames: usize,
    pub raw_masks: usize,
    pub refined_masks: usize,
    pub lifted_points: usize,
    pub discarded_points: usize,
    pub objects: usize,
}

/// Refines every frame's masks, aggregates their crop embeddings and fuses
/// them into an object map stamped with the configuration hash.
///
/// Object sources carry raw mask indices, so they can be looked up in the
/// scene's mask archive.
pub fn fuse(
    scene: &Scene,
    cfg: &Config,
    reembedder: Option<&dyn Reembedder>,
) -> Result<(ObjectMap, FuseStats), PipelineError> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let weights = cfg.embedding_weights()?;
    let per_frame: Vec<(Vec<Observation>, Vec<usize>)> = scene
        .frames
        .par_iter()
        .enumerate()
        .map(|(fi, frame)| {
            let refined = refine_frame(&scene.masks[fi], &schedule).map_err(|source| {
                PipelineError::Refine {
                    frame: frame.id,
                    source,
                }
            })?;
            let mut obs = Vec::with_capacity(refined.len());
            let mut raw_index = Vec::with_capacity(refined.len());
            for r in refined {
                let embedding = aggregate_embedding(&scene.crops[fi][r.source], &weights)
                    .map_err(|source| PipelineError::Embedding {
                        frame: frame.id,
                        mask: r.source,
                        source,
                    })?;
                raw_index.push(r.source);
                obs.push(Observation {
                    mask: r.mask,
                    embedding,
                });
            }
            Ok((obs, raw_index))
        })
        .collect::<Result<_, PipelineError>>()?;
    let (observations, raw_index): (Vec<_>, Vec<_>) = per_frame.into_iter().unzip();
    let out = fuse_scene(&scene.frames, &observations, &cfg.fusion(), reembedder)?;

    let slot: BTreeMap<u32, usize> = scene.frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    let mut objects = out.objects;
    for o in &mut objects {
        for s in &mut o.sources {
            let fi = slot[&s.frame_id];
            s.mask_index = raw_index[fi][s.mask_index as usize] as u32;
        }
    }
    let stats = FuseStats {
        frames: scene.frames.len(),
        raw_masks: scene.masks.iter().map(Vec::len).sum(),
        refined_masks: observations.iter().map(Vec::len).sum(),
        lifted_points: out.lifted_points,
        discarded_points: out.discarded_points,
        objects: objects.len(),
    };
    let map = ObjectMap {
        config_hash: cfg.hash(),
        voxel_size: cfg.voxel_size,
        objects,
    };
    Ok((map, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub classes: Vec<String>,
    pub predicted_objects: usize,
    pub gt_instances: usize,
    /// Labels from text-prompt similarity.
    pub metrics: SegMetrics,
    /// Labels copied from the nearest GT instance centroid, isolating the
    /// geometric quality of the map.
    pub transfer: SegMetrics,
}

impl SegmentReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>8}", "class", "IoU", "Acc");
        for (i, name) in self.classes.iter().enumerate() {
            let (Some(iou), Some(acc)) = (self.metrics.per_class_iou.get(&i), self.metrics.per_class_acc.get(&i)) else {
                continue;
            };
            let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4}", name, iou, acc);
        }
        let _ = writeln!(
            s,
            "mIoU {:.4}  fmIoU {:.4}  mAcc {:.4}  objects {}  gt instances {}  unmatched gt points {}",
            self.metrics.miou,
            self.metrics.fmiou,
            self.metrics.macc,
            self.predicted_objects,
            self.gt_instances,
            self.metrics.unmatched_gt
        );
        let _ = writeln!(
            s,
            "with transferred labels: mIoU {:.4}  fmIoU {:.4}  mAcc {:.4}",
            self.transfer.miou, self.transfer.fmiou, self.transfer.macc
        );
        s
    }

    /// `key value` lines for machine consumption.
    pub fn key_values(&self) -> String {
        let m = &self.metrics;
        let t = &self.transfer;
        format!(
            "miou {}\nfmiou {}\nmacc {}\ntransfer_miou {}\ntransfer_fmiou {}\ntransfer_macc {}\nobjects {}\ngt_instances {}\nunmatched_gt {}\n",
            m.miou, m.fmiou, m.macc, t.miou, t.fmiou, t.macc, self.predicted_objects, self.gt_instances, m.unmatched_gt
        )
    }
}

/// Scores an object map against the scene's GT points.
///
/// The label vocabulary is the set of GT classes, in table order.
pub fn segment_eval(
    map: &ObjectMap,
    scene: &Scene,
    cfg: &Config,
    embedder: &dyn LanguageGateway,
) -> Result<SegmentReport, PipelineError> {
    if scene.gt.is_empty() || scene.gt_points.is_empty() {
        return Err(PipelineError::Missing(format!(
            "{}: scene has no ground-truth table or points",
            scene.manifest.scene_id
        )));
    }
    let mut classes: Vec<String> = Vec::new();
    for o in &scene.gt {
        if !classes.contains(&o.class) {
            classes.push(o.class.clone());
        }
    }
    let class_of: BTreeMap<u32, usize> = scene
        .gt
        .iter()
        .map(|o| (o.id, classes.iter().position(|c| *c == o.class).unwrap()))
        .collect();
    let mut gt_pts = Vec::with_capacity(scene.gt_points.len());
    let mut sums: BTreeMap<u32, (Vec3, usize)> = BTreeMap::new();
    for p in &scene.gt_points {
        let Some(&c) = class_of.get(&p.instance) else {
            return Err(PipelineError::Missing(format!(
                "GT point instance {} is not in the GT table",
                p.instance
            )));
        };
        gt_pts.push((p.position, c));
        let e = sums.entry(p.instance).or_insert((Vec3::zeros(), 0));
        e.0 += p.position;
        e.1 += 1;
    }

    let prompts = TextPromptSet::embed(classes.clone(), &cfg.prompt_template, embedder)?;
    let labeled = assign_labels(&map.objects, &prompts)?;
    let pred: Vec<(Vec3, usize)> = labeled
        .iter()
        .flat_map(|l| l.object.points.iter().map(move |p| (*p, l.label_index)))
        .collect();
    let metrics = compute_metrics(&pred, &gt_pts, cfg.match_radius)?;

    let instances: Vec<GtInstance> = sums
        .iter()
        .map(|(id, (s, n))| GtInstance {
            centroid: s / *n as f64,
            class: class_of[id],
        })
        .collect();
    let transfer = if labeled.is_empty() {
        metrics_from_assignment(&gt_pts, &vec![None; gt_pts.len()])
    } else {
        let moved = transfer_labels(&labeled, &instances)?;
        let by_id: BTreeMap<u32, usize> = moved.into_iter().collect();
        let pred_t: Vec<(Vec3, usize)> = labeled
            .iter()
            .flat_map(|l| {
                let c = by_id[&l.object.id];
                l.object.points.iter().map(move |p| (*p, c))
            })
            .collect();
        compute_metrics(&pred_t, &gt_pts, cfg.match_radius)?
    };
    Ok(SegmentReport {
        classes,
        predicted_objects: map.objects.len(),
        gt_instances: scene.gt.len(),
        metrics,
        transfer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub records: Vec<ResultRecord>,
    pub accuracy: GroundingAccuracy,
}

impl RetrievalReport {
    pub fn summary(&self) -> String {
        let mut s = format!("queries {}\n", self.accuracy.count);
        for (t, a) in &self.accuracy.overall {
            let _ = writeln!(s, "A@{t} {a:.4}");
        }
        for (tag, (n, rates)) in &self.accuracy.per_subset {
            for (t, a) in rates {
                let _ = writeln!(s, "{tag} ({n}) A@{t} {a:.4}");
            }
        }
        s
    }
}

/// Runs every query addressed to this scene. A query that fails counts as
/// a miss with IoU zero and its error as status.
pub fn retrieve_eval(
    map: &ObjectMap,
    scene: &Scene,
    queries: &[QueryRecord],
    gateways: GatewaySet<'_>,
    cfg: &Config,
    tile_dir: Option<&Path>,
) -> Result<RetrievalReport, PipelineError> {
    let params = cfg.retrieval();
    let thresholds = GROUNDING_THRESHOLDS;
    let mine: Vec<(usize, &QueryRecord)> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| q.scene_id == scene.manifest.scene_id)
        .collect();
    let runs: Vec<(ResultRecord, GroundingResult)> = mine
        .par_iter()
        .map(|&(index, q)| {
            let out = retrieve(&q.text, &map.objects, &scene.frames, gateways, &params, tile_dir);
            let (status, object_id, predicted, g) = match out {
                Ok(o) => {
                    let g = GroundingResult::new(o.predicted_box, q.gt_box, &thresholds);
                    ("ok".to_string(), Some(o.object_id), Some(o.predicted_box), g)
                }
                Err(e) => {
                    log::warn!("query {index} {:?}: {e}", q.text);
                    let empty = crate::geometry::Box3::new(Vec3::zeros(), Vec3::zeros());
                    (e.to_string(), None, None, GroundingResult::from_iou(empty, q.gt_box, 0.0, &thresholds))
                }
            };
            let rec = ResultRecord {
                index,
                scene_id: q.scene_id.clone(),
                text: q.text.clone(),
                status,
                object_id,
                predicted_box: predicted,
                iou: g.iou,
                correct_at: g.correct_at.clone(),
            };
            (rec, g.with_subsets(q.subsets.clone()))
        })
        .collect();
    let (records, results): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let accuracy = grounding_accuracy(&results, &thresholds)?;
    Ok(RetrievalReport { records, accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockGateway;
    use crate::io::load_scene;
    use crate::synth::{synth_scene, SynthSceneSpec};

    #[test]
    fn fuse_records_raw_mask_indices() {
        let spec = SynthSceneSpec::random(3, 3, 3);
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_scene(&spec).unwrap().write(dir.path(), &[]).unwrap();
        let scene = load_scene(&manifest).unwrap();
        let cfg = Config {
            embed_dim: spec.embed_dim,
            ..Config::default()
        };
        let (map, stats) = fuse(&scene, &cfg, None).unwrap();
        assert_eq!(stats.frames, 3);
        assert!(stats.refined_masks < stats.raw_masks);
        for o in &map.objects {
            for s in &o.sources {
                let fi = scene.frames.iter().position(|f| f.id == s.frame_id).unwrap();
                // only whole-object masks survive refinement on clean scenes
                assert_eq!(scene.masks[fi][s.mask_index as usize].level, 0);
            }
        }
        let report = segment_eval(&map, &scene, &cfg, &MockGateway::new(spec.embed_dim, 0)).unwrap();
        assert!(report.table().contains("mIoU"));
        assert!(report.key_values().starts_with("miou "));
    }
}
