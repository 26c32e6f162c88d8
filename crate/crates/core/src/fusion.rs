//! Multi-view fusion of lifted 2D masks into 3D object instances.
//!
//! Each refined mask is back-projected into a point set, split into 3D
//! DBSCAN clusters, and the resulting candidates are merged greedily under
//! the symmetric-balanced IoV rule: both overlap ratios above `gamma` and
//! their difference below `delta`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::context_embedding::{normalize_f64, EmbeddingError};
use crate::dbscan::dbscan;
use crate::geometry::{
    back_project_depth, voxel_overlap, voxelize, Frame, GeometryError, Vec3, VoxelKey, VoxelSet,
};
use crate::mask::Mask2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("no pixel of the mask has valid depth")]
    AllInvalidDepth,
    #[error("every point was classified as noise")]
    AllNoise,
    #[error("empty input")]
    EmptyInput,
    #[error("mask belongs to frame {mask} but frame {frame} was given")]
    FrameMismatch { mask: u32, frame: u32 },
    #[error("no frame with id {0}")]
    MissingFrame(u32),
    #[error("embedding dimensions differ")]
    DimMismatch,
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub gamma: f64,
    pub delta: f64,
    pub voxel_size: f64,
    pub dbscan_eps_m: f64,
    pub dbscan_min_pts: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            delta: 0.5,
            voxel_size: crate::geometry::DEFAULT_VOXEL_SIZE,
            dbscan_eps_m: 0.1,
            dbscan_min_pts: 10,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(FusionError::InvalidParams(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(FusionError::InvalidParams(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if !(self.voxel_size > 0.0) || !(self.dbscan_eps_m > 0.0) || self.dbscan_min_pts == 0 {
            return Err(FusionError::InvalidParams(
                "voxel size, eps and min_pts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Origin of one observation contributing to an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceMask {
    pub frame_id: u32,
    pub mask_index: u32,
    /// 3D cluster index within the lifted mask.
    pub fragment: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object3D {
    pub id: u32,
    pub points: Vec<Vec3>,
    pub voxels: VoxelSet,
    /// Unit-norm mean of the member embeddings.
    pub embedding: Vec<f32>,
    pub sources: Vec<SourceMask>,
    pub merged_count: u32,
    /// Unnormalized sum of member embeddings.
    embedding_sum: Vec<f64>,
}

impl Object3D {
    /// A single-observation object.
    pub fn new(
        id: u32,
        points: Vec<Vec3>,
        embedding: Vec<f32>,
        source: SourceMask,
        voxel_size: f64,
    ) -> Result<Self, FusionError> {
        if points.is_empty() {
            return Err(FusionError::EmptyInput);
        }
        let voxels = voxelize(&points, voxel_size)?;
        let sum: Vec<f64> = embedding.iter().map(|&x| x as f64).collect();
        let embedding = normalize_f64(&sum)?;
        Ok(Self {
            id,
            points,
            voxels,
            embedding,
            sources: vec![source],
            merged_count: 1,
            embedding_sum: sum,
        })
    }

    /// Rebuilds an object from stored fields, e.g. when loading an object
    /// map. The member embeddings are unknown, so the stored mean direction
    /// stands in for each of the `merged_count` members.
    pub fn from_parts(
        id: u32,
        points: Vec<Vec3>,
        embedding: Vec<f32>,
        sources: Vec<SourceMask>,
        merged_count: u32,
        voxel_size: f64,
    ) -> Result<Self, FusionError> {
        if points.is_empty() || merged_count == 0 {
            return Err(FusionError::EmptyInput);
        }
        let voxels = voxelize(&points, voxel_size)?;
        let embedding_sum = embedding
            .iter()
            .map(|&x| x as f64 * merged_count as f64)
            .collect();
        Ok(Self {
            id,
            points,
            voxels,
            embedding,
            sources,
            merged_count,
            embedding_sum,
        })
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len() as f64
    }

    pub fn bounding_box(&self) -> crate::geometry::Box3 {
        crate::geometry::Box3::from_points(&self.points).expect("object has points")
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

/// Pure form of the merge rule on precomputed ratios.
#[inline]
pub fn merge_criterion(iov_ab: f64, iov_ba: f64, gamma: f64, delta: f64) -> bool {
    iov_ab > gamma && iov_ba > gamma && (iov_ab - iov_ba).abs() < delta
}

pub fn try_merge(a: &Object3D, b: &Object3D, params: &FusionParams) -> Result<bool, FusionError> {
    let o = voxel_overlap(&a.voxels, &b.voxels)?;
    Ok(merge_criterion(o.iov_ab(), o.iov_ba(), params.gamma, params.delta))
}

/// Merges objects into one: points concatenated in input order, voxel sets
/// united, embedding set to the normalized mean over every original member.
/// The result takes the smallest input id.
pub fn merge_objects(objs: &[Object3D]) -> Result<Object3D, FusionError> {
    let first = objs.first().ok_or(FusionError::EmptyInput)?;
    if objs.len() == 1 {
        return Ok(first.clone());
    }
    let dim = first.dim();
    if objs.iter().any(|o| o.dim() != dim) {
        return Err(FusionError::DimMismatch);
    }
    let mut voxels = first.voxels.clone();
    for o in &objs[1..] {
        voxels = voxels.union(&o.voxels)?;
    }
    let mut sum = vec![0.0f64; dim];
    for o in objs {
        for (s, x) in sum.iter_mut().zip(&o.embedding_sum) {
            *s += x;
        }
    }
    let embedding = normalize_f64(&sum)?;
    let mut sources: Vec<SourceMask> = objs.iter().flat_map(|o| o.sources.iter().copied()).collect();
    sources.sort_unstable();
    Ok(Object3D {
        id: objs.iter().map(|o| o.id).min().unwrap_or(0),
        points: objs.iter().flat_map(|o| o.points.iter().copied()).collect(),
        voxels,
        embedding,
        sources,
        merged_count: objs.iter().map(|o| o.merged_count).sum(),
        embedding_sum: sum,
    })
}

/// Back-projects every mask pixel with valid depth. Also returns the raster
/// index of the pixel behind each point.
pub fn lift_mask_indexed(
    mask: &Mask2D,
    frame: &Frame,
) -> Result<(Vec<Vec3>, Vec<u32>), FusionError> {
    if mask.frame_id != frame.id {
        return Err(FusionError::FrameMismatch {
            mask: mask.frame_id,
            frame: frame.id,
        });
    }
    let k = &frame.intrinsics;
    if mask.width != k.width || mask.height != k.height {
        return Err(FusionError::FrameMismatch {
            mask: mask.frame_id,
            frame: frame.id,
        });
    }
    let mut points = Vec::with_capacity(mask.area() as usize);
    let mut pixels = Vec::with_capacity(mask.area() as usize);
    for idx in mask.indices() {
        let d = frame.depth.data[idx as usize];
        if crate::geometry::is_valid_depth(d) {
            let (u, v) = (idx % k.width, idx / k.width);
            points.push(back_project_depth(
                u as f64, v as f64, d as f64, k, &frame.pose,
            ));
            pixels.push(idx);
        }
    }
    if points.is_empty() {
        return Err(FusionError::AllInvalidDepth);
    }
    Ok((points, pixels))
}

pub fn lift_mask(mask: &Mask2D, frame: &Frame) -> Result<Vec<Vec3>, FusionError> {
    lift_mask_indexed(mask, frame).map(|(p, _)| p)
}

/// Point indices of each 3D cluster, largest first (ties by creation order).
pub fn split_3d_indices(points: &[Vec3], params: &FusionParams) -> Result<Vec<Vec<usize>>, FusionError> {
    if points.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let c = dbscan(&raw, params.dbscan_eps_m, params.dbscan_min_pts);
    let mut clusters = c.clusters();
    if clusters.is_empty() {
        return Err(FusionError::AllNoise);
    }
    // stable sort keeps creation order among equal sizes
    clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
    Ok(clusters)
}

pub fn split_3d(points: &[Vec3], params: &FusionParams) -> Result<Vec<Vec<Vec3>>, FusionError> {
    Ok(split_3d_indices(points, params)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| points[i]).collect())
        .collect())
}

/// A refined 2D mask with its unit embedding, ready to be lifted.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mask: Mask2D,
    pub embedding: Vec<f32>,
}

/// Supplies fresh embeddings for split clusters, re-projected to 2D masks.
/// Returning `None` keeps the parent embedding.
pub trait Reembedder: Sync {
    fn reembed(&self, frame: &Frame, mask: &Mask2D, fragment: u32) -> Option<Vec<f32>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub objects: Vec<Object3D>,
    /// Lifted points dropped as 3D DBSCAN noise (including all-noise masks).
    pub discarded_points: usize,
    /// Total points produced by lifting.
    pub lifted_points: usize,
}

/// Fuses per-frame observations into 3D objects.
///
/// `observations[i]` belongs to the frame with the same position in
/// `frames`. Candidates are canonicalized by `(frame_id, mask index)`, so
/// the output does not depend on the order frames are supplied in.
pub fn fuse_scene(
    frames: &[Frame],
    observations: &[Vec<Observation>],
    params: &FusionParams,
    reembedder: Option<&dyn Reembedder>,
) -> Result<FusionOutput, FusionError> {
    params.validate()?;
    if frames.len() != observations.len() {
        return Err(FusionError::InvalidParams(format!(
            "{} frames but {} observation lists",
            frames.len(),
            observations.len()
        )));
    }
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| frames[i].id);

    let mut jobs: Vec<(&Frame, u32, &Observation)> = Vec::new();
    for &fi in &order {
        for (mi, obs) in observations[fi].iter().enumerate() {
            jobs.push((&frames[fi], mi as u32, obs));
        }
    }

    let lifted: Vec<Result<Lifted, FusionError>> = jobs
        .par_iter()
        .map(|&(frame, mask_index, obs)| lift_and_split(frame, mask_index, obs, params, reembedder))
        .collect();

    let mut candidates = Vec::new();
    let (mut discarded, mut total) = (0, 0);
    for r in lifted {
        let (objs, dropped, n) = r?;
        candidates.extend(objs);
        discarded += dropped;
        total += n;
    }
    let mut objects = merge_to_fixpoint(candidates, params)?;
    for (i, o) in objects.iter_mut().enumerate() {
        o.id = i as u32;
    }
    Ok(FusionOutput {
        objects,
        discarded_points: discarded,
        lifted_points: total,
    })
}

/// Fragments of one mask, its discarded point count and its lifted point count.
type Lifted = (Vec<Object3D>, usize, usize);

fn lift_and_split(
    frame: &Frame,
    mask_index: u32,
    obs: &Observation,
    params: &FusionParams,
    reembedder: Option<&dyn Reembedder>,
) -> Result<Lifted, FusionError> {
    let (points, pixels) = match lift_mask_indexed(&obs.mask, frame) {
        Ok(x) => x,
        Err(FusionError::AllInvalidDepth) => return Ok((Vec::new(), 0, 0)),
        Err(e) => return Err(e),
    };
    let n = points.len();
    let clusters = match split_3d_indices(&points, params) {
        Ok(c) => c,
        Err(FusionError::AllNoise) => return Ok((Vec::new(), n, n)),
        Err(e) => return Err(e),
    };
    let kept: usize = clusters.iter().map(|c| c.len()).sum();
    let single = clusters.len() == 1;
    let mut out = Vec::with_capacity(clusters.len());
    for (fragment, idx) in clusters.into_iter().enumerate() {
        let fragment = fragment as u32;
        let mut embedding = obs.embedding.clone();
        if !single {
            if let Some(r) = reembedder {
                let child = Mask2D::from_indices(
                    frame.id,
                    obs.mask.width,
                    obs.mask.height,
                    obs.mask.level,
                    idx.iter().map(|&i| pixels[i]),
                )
                .map_err(|_| FusionError::EmptyInput)?;
                if let Some(e) = r.reembed(frame, &child, fragment) {
                    if e.len() != embedding.len() {
                        return Err(FusionError::DimMismatch);
                    }
                    embedding = e;
                }
            }
        }
        let pts: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
        out.push(Object3D::new(
            0,
            pts,
            embedding,
            SourceMask {
                frame_id: frame.id,
                mask_index,
                fragment,
            },
            params.voxel_size,
        )?);
    }
    Ok((out, n - kept, n))
}

/// Greedy pairwise merging until no pair satisfies the merge rule.
///
/// Candidates keep their input order as slots. Each step merges the
/// lexicographically first passing pair `(i, j)`, `i < j`, into slot `i` and
/// frees slot `j`. Overlap counts between slots sharing a voxel are kept
/// incrementally. After a merge at `(i, j)` all pairs before it that do not
/// involve `i` are known to fail, so only pairs of `i` and pairs after
/// `(i, j)` need rechecking.
pub fn merge_to_fixpoint(
    candidates: Vec<Object3D>,
    params: &FusionParams,
) -> Result<Vec<Object3D>, FusionError> {
    let n = candidates.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if candidates.iter().any(|c| c.voxels.voxel_size() != params.voxel_size) {
        return Err(GeometryError::SizeMismatch(
            candidates[0].voxels.voxel_size(),
            params.voxel_size,
        )
        .into());
    }
    let mut slots: Vec<Option<Object3D>> = candidates.into_iter().map(Some).collect();
    let mut owners: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, s) in slots.iter().enumerate() {
        for key in s.as_ref().unwrap().voxels.keys() {
            owners.entry(*key).or_default().push(i);
        }
    }
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for list in owners.values() {
        for (x, &a) in list.iter().enumerate() {
            for &b in &list[x + 1..] {
                *pairs.entry((a, b)).or_insert(0) += 1;
                adjacency[a].insert(b);
                adjacency[b].insert(a);
            }
        }
    }
    let sizes = |slots: &[Option<Object3D>], i: usize| slots[i].as_ref().unwrap().voxels.len();
    let passes = |slots: &[Option<Object3D>], (a, b): (usize, usize), inter: usize| {
        let (la, lb) = (sizes(slots, a) as f64, sizes(slots, b) as f64);
        merge_criterion(inter as f64 / la, inter as f64 / lb, params.gamma, params.delta)
    };

    let mut cursor = (0usize, 0usize);
    let mut dirty: Option<usize> = None;
    loop {
        let mut best: Option<(usize, usize)> = pairs
            .range(cursor..)
            .find(|(&p, &inter)| passes(&slots, p, inter))
            .map(|(&p, _)| p);
        if let Some(i) = dirty {
            for &k in &adjacency[i] {
                let p = if k < i { (k, i) } else { (i, k) };
                if best.is_some_and(|b| p >= b) {
                    continue;
                }
                if passes(&slots, p, pairs[&p]) {
                    best = Some(p);
                }
            }
        }
        let Some((i, j)) = best else { break };

        let obj_j = slots[j].take().unwrap();
        let obj_i = slots[i].take().unwrap();
        // incremental overlap update for voxels new to i
        for key in obj_j.voxels.keys() {
            let list = owners.get_mut(key).unwrap();
            let had_i = list.contains(&i);
            list.retain(|&s| s != j);
            if !had_i {
                for &k in list.iter() {
                    let p = if k < i { (k, i) } else { (i, k) };
                    *pairs.entry(p).or_insert(0) += 1;
                    adjacency[i].insert(k);
                    adjacency[k].insert(i);
                }
                list.push(i);
            }
        }
        for k in std::mem::take(&mut adjacency[j]) {
            adjacency[k].remove(&j);
            pairs.remove(&if k < j { (k, j) } else { (j, k) });
        }
        slots[i] = Some(merge_objects(&[obj_i, obj_j])?);
        cursor = (i, j);
        dirty = Some(i);
    }
    Ok(slots.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthMap, Intrinsics, Pose};
    use approx::assert_abs_diff_eq;

    fn grid_object(id: u32, keys: impl Iterator<Item = [i32; 3]>, e: Vec<f32>) -> Object3D {
        let pts: Vec<Vec3> = keys
            .map(|k| Vec3::new(k[0] as f64 + 0.5, k[1] as f64 + 0.5, k[2] as f64 + 0.5) * 0.05)
            .collect();
        Object3D::new(
            id,
            pts,
            e,
            SourceMask {
                frame_id: id,
                mask_index: 0,
                fragment: 0,
            },
            0.05,
        )
        .unwrap()
    }

    fn square(n: i32, off: i32) -> impl Iterator<Item = [i32; 3]> {
        (0..n * n).map(move |i| [i % n + off, i / n, 0])
    }

    #[test]
    fn criterion_cases() {
        let p = FusionParams {
            gamma: 0.8,
            delta: 0.2,
            ..Default::default()
        };
        let a = grid_object(0, square(5, 0), vec![1.0, 0.0]);
        assert!(try_merge(&a, &a, &p).unwrap());
        // cushion inside couch
        assert!(!merge_criterion(1.0, 0.1, 0.8, 0.2));
        assert!(merge_criterion(0.90, 0.85, 0.8, 0.1));
        assert!(!merge_criterion(0.90, 0.85, 0.9, 0.1));
    }

    #[test]
    fn merge_identity_and_means() {
        let a = grid_object(3, square(3, 0), vec![1.0, 0.0, 0.0]);
        assert_eq!(merge_objects(std::slice::from_ref(&a)).unwrap(), a);
        let b = grid_object(5, square(3, 10), vec![1.0, 0.0, 0.0]);
        let m = merge_objects(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.embedding, vec![1.0, 0.0, 0.0]);
        assert_eq!(m.merged_count, 2);
        assert_eq!(m.id, 3);
        assert_eq!(m.points.len(), 18);
        assert_eq!(m.voxels, voxelize(&m.points, 0.05).unwrap());

        let c = grid_object(6, square(3, 20), vec![0.0, 0.0, 1.0]);
        let d = grid_object(7, square(3, 30), vec![0.0, 1.0, 0.0]);
        let m = merge_objects(&[a, c, d]).unwrap();
        let s = 1.0 / 3f32.sqrt();
        for x in &m.embedding {
            assert_abs_diff_eq!(*x, s, epsilon = 1e-6);
        }
        assert_eq!(merge_objects(&[]), Err(FusionError::EmptyInput));
    }

    #[test]
    fn lift_planar_mask() {
        let k = Intrinsics::new(50.0, 50.0, 16.0, 16.0, 32, 32).unwrap();
        let f = Frame::new(4, DepthMap::filled(32, 32, 2.0), k, Pose::identity()).unwrap();
        let m = Mask2D::from_pixels(4, 32, 32, 0, [(1, 1), (2, 1), (1, 2), (2, 2)]).unwrap();
        let pts = lift_mask(&m, &f).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.z == 2.0));

        let zero = Frame::new(4, DepthMap::filled(32, 32, 0.0), k, Pose::identity()).unwrap();
        assert_eq!(lift_mask(&m, &zero), Err(FusionError::AllInvalidDepth));
        let other = Frame::new(5, DepthMap::filled(32, 32, 2.0), k, Pose::identity()).unwrap();
        assert!(matches!(
            lift_mask(&m, &other),
            Err(FusionError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn split_noise_only() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let p = FusionParams::default();
        assert_eq!(split_3d(&pts, &p), Err(FusionError::AllNoise));
    }

    #[test]
    fn fixpoint_chains_merges() {
        let p = FusionParams {
            gamma: 0.5,
            delta: 0.5,
            ..Default::default()
        };
        let e = vec![1.0f32, 0.0];
        // a ~ b and b ~ c, a and c share less
        let a = grid_object(0, square(10, 0), e.clone());
        let b = grid_object(1, square(10, 2), e.clone());
        let c = grid_object(2, square(10, 4), e.clone());
        let far = grid_object(3, square(10, 100), e);
        let out = merge_to_fixpoint(vec![a, b, c, far], &p).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].merged_count, 3);
        for x in 0..out.len() {
            for y in x + 1..out.len() {
                assert!(!try_merge(&out[x], &out[y], &p).unwrap());
            }
        }
    }

    #[test]
    fn containment_is_not_merged() {
        let p = FusionParams {
            gamma: 0.05,
            delta: 0.4,
            ..Default::default()
        };
        let couch = grid_object(0, square(10, 0), vec![1.0, 0.0]);
        let cushion = grid_object(1, square(3, 2), vec![0.0, 1.0]);
        let out = merge_to_fixpoint(vec![couch, cushion], &p).unwrap();
        assert_eq!(out.len(), 2);
    }
}
