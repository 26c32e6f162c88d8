//! Multi-crop context descriptors for a mask.
//!
//! Five crops are taken around each mask: the mask itself on a black
//! background, its tight bounding box, two enlarged boxes, and a surroundings
//! box with the mask blacked out. Their image embeddings are combined with
//! the surroundings term subtracted and the result is L2-normalized.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{Mask2D, PixelRect};

pub const LARGE_SCALE: f64 = 2.5;
pub const HUGE_SCALE: f64 = 4.0;
pub const SURROUNDINGS_SCALE: f64 = 3.0;

const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("combined embedding has zero norm")]
    ZeroNorm,
    #[error("crop embeddings have mismatched dimensions")]
    DimMismatch,
    #[error("non-finite value in crop embedding")]
    NonFinite,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CropKind {
    Mask = 0,
    BBox = 1,
    Large = 2,
    Huge = 3,
    Surroundings = 4,
}

impl CropKind {
    /// Canonical crop order used in archives and weight vectors.
    pub const ALL: [CropKind; 5] = [
        CropKind::Mask,
        CropKind::BBox,
        CropKind::Large,
        CropKind::Huge,
        CropKind::Surroundings,
    ];

    pub fn scale(self) -> f64 {
        match self {
            CropKind::Mask | CropKind::BBox => 1.0,
            CropKind::Large => LARGE_SCALE,
            CropKind::Huge => HUGE_SCALE,
            CropKind::Surroundings => SURROUNDINGS_SCALE,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CropKind::Mask => "mask",
            CropKind::BBox => "bbox",
            CropKind::Large => "large",
            CropKind::Huge => "huge",
            CropKind::Surroundings => "surroundings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub kind: CropKind,
    pub rect: PixelRect,
    pub zero_outside_mask: bool,
    pub zero_inside_mask: bool,
}

/// Scales `rect` about its center. The new extent is floored/ceiled to whole
/// pixels and clipped to `[0, width] x [0, height]`.
pub fn scale_rect(rect: PixelRect, scale: f64, width: u32, height: u32) -> PixelRect {
    let cx = (rect.x0 as f64 + rect.x1 as f64) * 0.5;
    let cy = (rect.y0 as f64 + rect.y1 as f64) * 0.5;
    let hw = (rect.x1 - rect.x0) as f64 * 0.5 * scale;
    let hh = (rect.y1 - rect.y0) as f64 * 0.5 * scale;
    let clip = |x: f64, hi: u32| x.clamp(0.0, hi as f64) as u32;
    PixelRect {
        x0: clip((cx - hw).floor(), width),
        y0: clip((cy - hh).floor(), height),
        x1: clip((cx + hw).ceil(), width),
        y1: clip((cy + hh).ceil(), height),
    }
}

/// The five crop rectangles, in [`CropKind::ALL`] order.
pub fn crop_rects(mask: &Mask2D) -> [CropSpec; 5] {
    let (w, h) = (mask.width, mask.height);
    let bbox = mask.bbox();
    CropKind::ALL.map(|kind| CropSpec {
        kind,
        rect: match kind {
            CropKind::Mask | CropKind::BBox => bbox,
            k => scale_rect(bbox, k.scale(), w, h),
        },
        zero_outside_mask: kind == CropKind::Mask,
        zero_inside_mask: kind == CropKind::Surroundings,
    })
}

/// Cuts a crop out of an RGB frame. Zeroed pixels are set to 0 in every
/// channel.
pub fn render_crop(image: &RgbImage, mask: &Mask2D, spec: &CropSpec) -> RgbImage {
    let r = spec.rect;
    let mut out = RgbImage::new(r.width(), r.height());
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let inside = mask.contains(x, y);
            let zero = (spec.zero_outside_mask && !inside) || (spec.zero_inside_mask && inside);
            if !zero && x < image.width() && y < image.height() {
                out.put_pixel(x - r.x0, y - r.y0, *image.get_pixel(x, y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWeights {
    pub mask: f64,
    pub bbox: f64,
    pub large: f64,
    pub huge: f64,
    /// Applied with a negative sign.
    pub surroundings: f64,
}

impl Default for EmbeddingWeights {
    fn default() -> Self {
        Self {
            mask: 0.4,
            bbox: 0.3,
            large: 0.2,
            huge: 0.1,
            surroundings: 0.15,
        }
    }
}

impl EmbeddingWeights {
    pub fn from_array(w: [f64; 5]) -> Result<Self, EmbeddingError> {
        let weights = Self {
            mask: w[0],
            bbox: w[1],
            large: w[2],
            huge: w[3],
            surroundings: w[4],
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.mask, self.bbox, self.large, self.huge, self.surroundings]
    }

    /// Signed coefficients in crop order.
    pub fn coefficients(&self) -> [f64; 5] {
        [self.mask, self.bbox, self.large, self.huge, -self.surroundings]
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.as_array().iter().any(|w| !w.is_finite()) {
            return Err(EmbeddingError::InvalidWeights("weights must be finite".into()));
        }
        if self.surroundings < 0.0 {
            return Err(EmbeddingError::InvalidWeights(
                "surroundings weight must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let a = self.as_array().map(|w| w * s);
        Self {
            mask: a[0],
            bbox: a[1],
            large: a[2],
            huge: a[3],
            surroundings: a[4],
        }
    }
}

/// `normalize(Σ w_i e_i − w_sur e_sur)` accumulated in f64.
pub fn aggregate_embedding(
    per_crop: &[Vec<f32>; 5],
    weights: &EmbeddingWeights,
) -> Result<Vec<f32>, EmbeddingError> {
    weights.validate()?;
    let dim = per_crop[0].len();
    if dim == 0 || per_crop.iter().any(|e| e.len() != dim) {
        return Err(EmbeddingError::DimMismatch);
    }
    if per_crop.iter().flatten().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let coeffs = weights.coefficients();
    let mut acc = vec![0.0f64; dim];
    for (e, c) in per_crop.iter().zip(coeffs) {
        for (a, x) in acc.iter_mut().zip(e) {
            *a += c * *x as f64;
        }
    }
    normalize_f64(&acc)
}

pub(crate) fn normalize_f64(v: &[f64]) -> Result<Vec<f32>, EmbeddingError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= ZERO_NORM_EPS) {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(v.iter().map(|x| (x / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub per_crop: [Vec<f32>; 5],
    pub aggregated: Vec<f32>,
}

impl ContextEmbedding {
    pub fn new(per_crop: [Vec<f32>; 5], weights: &EmbeddingWeights) -> Result<Self, EmbeddingError> {
        let aggregated = aggregate_embedding(&per_crop, weights)?;
        Ok(Self {
            per_crop,
            aggregated,
        })
    }

    pub fn dim(&self) -> usize {
        self.aggregated.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rect_mask(x0: u32, y0: u32, x1: u32, y1: u32, w: u32, h: u32) -> Mask2D {
        Mask2D::from_rect(0, w, h, 0, PixelRect { x0, y0, x1, y1 }).unwrap()
    }

    #[test]
    fn large_crop_about_center() {
        let m = rect_mask(40, 40, 60, 60, 200, 200);
        let crops = crop_rects(&m);
        assert_eq!(
            crops[2].rect,
            PixelRect {
                x0: 25,
                y0: 25,
                x1: 75,
                y1: 75
            }
        );
        assert_eq!(crops[1].rect, m.bbox());
        assert_eq!(
            crops[4].rect,
            PixelRect {
                x0: 20,
                y0: 20,
                x1: 80,
                y1: 80
            }
        );
        assert!(crops[0].zero_outside_mask && !crops[0].zero_inside_mask);
        assert!(crops[4].zero_inside_mask && !crops[4].zero_outside_mask);
        assert!(crops[1..4]
            .iter()
            .all(|c| !c.zero_inside_mask && !c.zero_outside_mask));
    }

    #[test]
    fn corner_crop_clipped() {
        let m = rect_mask(0, 0, 10, 10, 200, 200);
        let huge = crop_rects(&m)[3].rect;
        assert_eq!(
            huge,
            PixelRect {
                x0: 0,
                y0: 0,
                x1: 25,
                y1: 25
            }
        );
    }

    #[test]
    fn scale_constants() {
        let scales: Vec<f64> = CropKind::ALL.iter().map(|k| k.scale()).collect();
        assert_eq!(scales, vec![1.0, 1.0, 2.5, 4.0, 3.0]);
    }

    #[test]
    fn single_term_normalization() {
        let w = EmbeddingWeights::from_array([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let z = vec![0.0f32, 0.0];
        let per = [vec![3.0f32, 4.0], z.clone(), z.clone(), z.clone(), z];
        let e = aggregate_embedding(&per, &w).unwrap();
        assert_abs_diff_eq!(e[0], 0.6, epsilon = 1e-7);
        assert_abs_diff_eq!(e[1], 0.8, epsilon = 1e-7);
    }

    #[test]
    fn exact_cancellation_is_zero_norm() {
        let w = EmbeddingWeights::from_array([1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let e = vec![0.3f32, -0.2, 0.9];
        let per = [e.clone(), e.clone(), e.clone(), e.clone(), e];
        assert_eq!(aggregate_embedding(&per, &w), Err(EmbeddingError::ZeroNorm));
    }

    #[test]
    fn dim_mismatch_and_bad_weights() {
        let per = [vec![1.0f32], vec![1.0], vec![1.0], vec![1.0], vec![1.0, 2.0]];
        assert_eq!(
            aggregate_embedding(&per, &EmbeddingWeights::default()),
            Err(EmbeddingError::DimMismatch)
        );
        assert!(EmbeddingWeights::from_array([1.0, 0.0, 0.0, 0.0, -0.1]).is_err());
        assert!(EmbeddingWeights::from_array([f64::NAN, 0.0, 0.0, 0.0, 0.1]).is_err());
    }

    #[test]
    fn render_crop_zeroing() {
        let m = rect_mask(4, 4, 6, 6, 10, 10);
        let img = RgbImage::from_pixel(10, 10, image::Rgb([200, 100, 50]));
        let crops = crop_rects(&m);
        let masked = render_crop(&img, &m, &crops[0]);
        assert_eq!(masked.dimensions(), (2, 2));
        assert!(masked.pixels().all(|p| p.0 == [200, 100, 50]));
        let sur = render_crop(&img, &m, &crops[4]);
        assert_eq!(sur.dimensions(), (6, 6));
        assert_eq!(sur.get_pixel(2, 2).0, [0, 0, 0]);
        assert_eq!(sur.get_pixel(0, 0).0, [200, 100, 50]);
    }
}
