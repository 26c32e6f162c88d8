//! Progressive multi-granularity mask selection and cleanup.
//!
//! Raw candidates arrive grouped by granularity level, coarse to fine. A
//! candidate at level `k` survives only if its overlap with every mask kept
//! so far, measured as `|m ∩ m'| / |m|`, stays below `τ_k`. Small or
//! border-touching masks are then dropped and each survivor is re-clustered
//! in pixel space to separate disconnected fragments.

use std::collections::HashMap;

use thiserror::Error;

use crate::dbscan::dbscan;
use crate::mask::{Mask2D, MaskError};

/// Masks above this area are clustered on a stride-2 pixel lattice.
pub const SUBSAMPLE_AREA: u64 = 50_000;
const SUBSAMPLE_STRIDE: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("masks belong to different frames or image sizes")]
    FrameMismatch,
    #[error("schedule has {thresholds} thresholds but {levels} levels were given")]
    ScheduleMismatch { levels: usize, thresholds: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("every pixel of the mask was classified as noise")]
    Degenerate,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularitySchedule {
    /// Granularity values `g_1 < g_2 < ... < g_K`.
    pub levels: Vec<f64>,
    /// Overlap threshold `τ_k` per level.
    pub thresholds: Vec<f64>,
    pub min_area: u64,
    pub margin_px: u32,
    pub dbscan_eps_px: f64,
    pub dbscan_min_pts: usize,
}

impl Default for GranularitySchedule {
    fn default() -> Self {
        Self {
            levels: vec![1.0, 2.0, 3.0],
            thresholds: vec![1.0, 0.5, 0.3],
            min_area: 1,
            margin_px: 1,
            dbscan_eps_px: 3.0,
            dbscan_min_pts: 8,
        }
    }
}

impl GranularitySchedule {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.levels.len() != self.thresholds.len() {
            return Err(RefineError::ScheduleMismatch {
                levels: self.levels.len(),
                thresholds: self.thresholds.len(),
            });
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(RefineError::InvalidSchedule(
                "granularity levels must be strictly increasing".into(),
            ));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(RefineError::InvalidSchedule(
                "thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.min_area < 1 {
            return Err(RefineError::InvalidSchedule("min_area must be >= 1".into()));
        }
        if !(self.dbscan_eps_px > 0.0) || self.dbscan_min_pts == 0 {
            return Err(RefineError::InvalidSchedule(
                "pixel DBSCAN needs eps > 0 and min_pts >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Minimum area as a fraction of the image, rounded up.
    pub fn min_area_for(frac: f64, width: u32, height: u32) -> u64 {
        ((frac * width as f64 * height as f64).ceil() as u64).max(1)
    }
}

/// `|m ∩ m'| / |m|`; the denominator is always the first argument.
pub fn overlap_ratio(m: &Mask2D, m_prime: &Mask2D) -> Result<f64, RefineError> {
    if !m.same_canvas(m_prime) {
        return Err(RefineError::FrameMismatch);
    }
    Ok(m.intersection_area(m_prime) as f64 / m.area() as f64)
}

/// Index of a mask inside the per-level input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LevelRef {
    pub level: usize,
    pub index: usize,
}

/// Order in which masks of one level are considered: descending area, then
/// ascending first-pixel raster index, then input position.
pub fn level_order(masks: &[&Mask2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| {
        masks[b]
            .area()
            .cmp(&masks[a].area())
            .then(masks[a].first_index().cmp(&masks[b].first_index()))
            .then(a.cmp(&b))
    });
    order
}

/// Runs the progressive filter and reports which inputs were kept, in the
/// order they were accepted.
///
/// Every candidate, including those of the first level, is tested against all
/// masks accepted before it. With `τ_1 = 1.0` a first-level mask is only
/// dropped when it lies entirely inside an earlier first-level mask.
pub fn progressive_select_refs(
    levels: &[Vec<&Mask2D>],
    thresholds: &[f64],
) -> Result<Vec<LevelRef>, RefineError> {
    if levels.len() != thresholds.len() {
        return Err(RefineError::ScheduleMismatch {
            levels: levels.len(),
            thresholds: thresholds.len(),
        });
    }
    let canvas = levels.iter().flatten().next().copied();
    if let Some(c) = canvas {
        if levels.iter().flatten().any(|m| !m.same_canvas(c)) {
            return Err(RefineError::FrameMismatch);
        }
    }

    let mut kept: Vec<LevelRef> = Vec::new();
    let mut kept_masks: Vec<&Mask2D> = Vec::new();
    for (k, masks) in levels.iter().enumerate() {
        let tau = thresholds[k];
        for i in level_order(masks) {
            let m = masks[i];
            let novel = kept_masks
                .iter()
                .all(|prev| (m.intersection_area(prev) as f64 / m.area() as f64) < tau);
            if novel {
                kept.push(LevelRef { level: k, index: i });
                kept_masks.push(m);
            }
        }
    }
    Ok(kept)
}

pub fn progressive_select(
    levels: &[Vec<Mask2D>],
    schedule: &GranularitySchedule,
) -> Result<Vec<Mask2D>, RefineError> {
    let views: Vec<Vec<&Mask2D>> = levels.iter().map(|l| l.iter().collect()).collect();
    let refs = progressive_select_refs(&views, &schedule.thresholds)?;
    Ok(refs
        .into_iter()
        .map(|r| levels[r.level][r.index].clone())
        .collect())
}

pub fn touches_border(mask: &Mask2D, margin_px: u32) -> bool {
    let b = mask.bbox();
    b.x0 < margin_px
        || b.y0 < margin_px
        || b.x1 as u64 + margin_px as u64 > mask.width as u64
        || b.y1 as u64 + margin_px as u64 > mask.height as u64
}

pub fn keep_mask(mask: &Mask2D, min_area: u64, margin_px: u32) -> bool {
    mask.area() >= min_area && !touches_border(mask, margin_px)
}

/// Drops masks smaller than `min_area` or whose bounding box comes within
/// `margin_px` of the image border.
pub fn filter_small(masks: &[Mask2D], min_area: u64, margin_px: u32) -> Vec<Mask2D> {
    masks
        .iter()
        .filter(|m| keep_mask(m, min_area, margin_px))
        .cloned()
        .collect()
}

/// Splits a mask into its DBSCAN clusters over pixel coordinates.
///
/// Noise pixels are discarded. Fragments are returned in cluster creation
/// order, which follows the raster order of their first core pixel. Masks
/// larger than [`SUBSAMPLE_AREA`] are clustered on the even-coordinate
/// lattice with `min_pts` divided by four; remaining pixels join the cluster
/// of the nearest lattice pixel within `eps_px`.
pub fn split_fragments_2d(
    mask: &Mask2D,
    eps_px: f64,
    min_pts: usize,
) -> Result<Vec<Mask2D>, RefineError> {
    let pixels: Vec<(u32, u32)> = mask.pixels().collect();
    let labels: Vec<Option<u32>>;
    let n_clusters;
    if mask.area() > SUBSAMPLE_AREA {
        let stride2 = (SUBSAMPLE_STRIDE * SUBSAMPLE_STRIDE) as usize;
        let sample_idx: Vec<usize> = pixels
            .iter()
            .enumerate()
            .filter(|(_, (u, v))| u % SUBSAMPLE_STRIDE == 0 && v % SUBSAMPLE_STRIDE == 0)
            .map(|(i, _)| i)
            .collect();
        let sample_pts: Vec<[f64; 2]> = sample_idx
            .iter()
            .map(|&i| [pixels[i].0 as f64, pixels[i].1 as f64])
            .collect();
        let eff_min = min_pts.div_ceil(stride2).max(1);
        let c = dbscan(&sample_pts, eps_px, eff_min);
        n_clusters = c.n_clusters;
        labels = assign_to_lattice(&pixels, &sample_idx, &c.labels, eps_px);
    } else {
        let pts: Vec<[f64; 2]> = pixels.iter().map(|&(u, v)| [u as f64, v as f64]).collect();
        let c = dbscan(&pts, eps_px, min_pts);
        n_clusters = c.n_clusters;
        labels = c.labels;
    }

    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
    for (&(u, v), l) in pixels.iter().zip(&labels) {
        if let Some(c) = l {
            groups[*c as usize].push(v * mask.width + u);
        }
    }
    let out: Vec<Mask2D> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| Mask2D::from_indices(mask.frame_id, mask.width, mask.height, mask.level, g))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(RefineError::Degenerate);
    }
    Ok(out)
}

fn assign_to_lattice(
    pixels: &[(u32, u32)],
    sample_idx: &[usize],
    sample_labels: &[Option<u32>],
    eps: f64,
) -> Vec<Option<u32>> {
    let cell = |u: f64, v: f64| ((u / eps).floor() as i64, (v / eps).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (s, &pi) in sample_idx.iter().enumerate() {
        if sample_labels[s].is_some() {
            let (u, v) = pixels[pi];
            grid.entry(cell(u as f64, v as f64)).or_default().push(s);
        }
    }
    let mut labels = vec![None; pixels.len()];
    for (s, &pi) in sample_idx.iter().enumerate() {
        labels[pi] = sample_labels[s];
    }
    let eps2 = eps * eps;
    for (pi, &(u, v)) in pixels.iter().enumerate() {
        if u % SUBSAMPLE_STRIDE == 0 && v % SUBSAMPLE_STRIDE == 0 {
            continue;
        }
        let (cu, cv) = cell(u as f64, v as f64);
        let mut best: Option<(f64, usize)> = None;
        for du in -1..=1 {
            for dv in -1..=1 {
                let Some(members) = grid.get(&(cu + du, cv + dv)) else {
                    continue;
                };
                for &s in members {
                    let (su, sv) = pixels[sample_idx[s]];
                    let d2 = (su as f64 - u as f64).powi(2) + (sv as f64 - v as f64).powi(2);
                    if d2 <= eps2 && best.is_none_or(|(bd, bs)| d2 < bd || (d2 == bd && s < bs)) {
                        best = Some((d2, s));
                    }
                }
            }
        }
        labels[pi] = best.and_then(|(_, s)| sample_labels[s]);
    }
    labels
}

/// A refined mask with its provenance in the raw per-frame candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMask {
    /// Index of the raw candidate this mask came from.
    pub source: usize,
    /// Fragment number within that candidate after pixel clustering.
    pub fragment: u32,
    pub mask: Mask2D,
}

/// Full per-frame refinement: progressive selection, small/border filtering,
/// then fragment splitting. `raw` holds every candidate of one frame; each
/// mask's `level` selects its granularity group.
pub fn refine_frame(
    raw: &[Mask2D],
    schedule: &GranularitySchedule,
) -> Result<Vec<RefinedMask>, RefineError> {
    schedule.validate()?;
    let k = schedule.levels.len();
    let mut groups: Vec<Vec<&Mask2D>> = vec![Vec::new(); k];
    let mut group_src: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, m) in raw.iter().enumerate() {
        let level = m.level as usize;
        if level >= k {
            return Err(RefineError::ScheduleMismatch {
                levels: level + 1,
                thresholds: k,
            });
        }
        groups[level].push(m);
        group_src[level].push(i);
    }
    let selected = progressive_select_refs(&groups, &schedule.thresholds)?;

    let mut out = Vec::new();
    for r in selected {
        let source = group_src[r.level][r.index];
        let mask = &raw[source];
        if !keep_mask(mask, schedule.min_area, schedule.margin_px) {
            continue;
        }
        let fragments =
            match split_fragments_2d(mask, schedule.dbscan_eps_px, schedule.dbscan_min_pts) {
                Ok(f) => f,
                Err(RefineError::Degenerate) => continue,
                Err(e) => return Err(e),
            };
        for (fragment, f) in fragments.into_iter().enumerate() {
            if keep_mask(&f, schedule.min_area, schedule.margin_px) {
                out.push(RefinedMask {
                    source,
                    fragment: fragment as u32,
                    mask: f,
                });
            }
        }
    }
    Ok(out)
}
