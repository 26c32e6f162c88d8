//! Run-length encoded binary masks.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask is empty")]
    Empty,
    #[error("pixel index {index} outside {width}x{height} image")]
    OutOfBounds { index: u64, width: u32, height: u32 },
    #[error("runs are not sorted, disjoint and non-adjacent")]
    NonCanonical,
    #[error("masks belong to different frames or image sizes")]
    FrameMismatch,
}

/// One horizontal run over row-major pixel indices `start..start+len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Run {
    pub start: u32,
    pub len: u32,
}

impl Run {
    #[inline]
    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// A binary region of one frame at one granularity level.
///
/// Runs are canonical: sorted, non-empty, and separated by at least one
/// unset pixel, so two masks with equal pixels compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask2D {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    pub level: u16,
    runs: Vec<Run>,
    area: u64,
}

impl Mask2D {
    /// Builds a mask from pixel indices in any order; duplicates collapse.
    pub fn from_indices(
        frame_id: u32,
        width: u32,
        height: u32,
        level: u16,
        indices: impl IntoIterator<Item = u32>,
    ) -> Result<Self, MaskError> {
        let mut idx: Vec<u32> = indices.into_iter().collect();
        idx.sort_unstable();
        idx.dedup();
        let total = width as u64 * height as u64;
        if let Some(&last) = idx.last() {
            if last as u64 >= total {
                return Err(MaskError::OutOfBounds {
                    index: last as u64,
                    width,
                    height,
                });
            }
        }
        let mut runs: Vec<Run> = Vec::new();
        for i in idx {
            match runs.last_mut() {
                Some(r) if r.end() == i => r.len += 1,
                _ => runs.push(Run { start: i, len: 1 }),
            }
        }
        Self::from_runs(frame_id, width, height, level, runs)
    }

    pub fn from_pixels(
        frame_id: u32,
        width: u32,
        height: u32,
        level: u16,
        pixels: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, MaskError> {
        let mut idx = Vec::new();
        for (u, v) in pixels {
            if u >= width || v >= height {
                return Err(MaskError::OutOfBounds {
                    index: v as u64 * width as u64 + u as u64,
                    width,
                    height,
                });
            }
            idx.push(v * width + u);
        }
        Self::from_indices(frame_id, width, height, level, idx)
    }

    pub fn from_bitmap(
        frame_id: u32,
        width: u32,
        height: u32,
        level: u16,
        bits: &[bool],
    ) -> Result<Self, MaskError> {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self::from_indices(
            frame_id,
            width,
            height,
            level,
            bits.iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .map(|(i, _)| i as u32),
        )
    }

    pub fn from_rect(
        frame_id: u32,
        width: u32,
        height: u32,
        level: u16,
        rect: PixelRect,
    ) -> Result<Self, MaskError> {
        let x1 = rect.x1.min(width);
        let y1 = rect.y1.min(height);
        let mut runs = Vec::new();
        if rect.x0 < x1 {
            for y in rect.y0..y1 {
                runs.push(Run {
                    start: y * width + rect.x0,
                    len: x1 - rect.x0,
                });
            }
        }
        // adjacent rows merge only when the rect spans full rows
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(m) if m.end() == r.start => m.len += r.len,
                _ => merged.push(r),
            }
        }
        Self::from_runs(frame_id, width, height, level, merged)
    }

    /// Validates canonical runs. An empty mask is rejected.
    pub fn from_runs(
        frame_id: u32,
        width: u32,
        height: u32,
        level: u16,
        runs: Vec<Run>,
    ) -> Result<Self, MaskError> {
        if runs.is_empty() {
            return Err(MaskError::Empty);
        }
        let total = width as u64 * height as u64;
        let mut area = 0u64;
        let mut prev_end: Option<u32> = None;
        for r in &runs {
            if r.len == 0 {
                return Err(MaskError::NonCanonical);
            }
            if let Some(e) = prev_end {
                if r.start <= e {
                    return Err(MaskError::NonCanonical);
                }
            }
            let end = r.start as u64 + r.len as u64;
            if end > total {
                return Err(MaskError::OutOfBounds {
                    index: end - 1,
                    width,
                    height,
                });
            }
            area += r.len as u64;
            prev_end = Some(r.end());
        }
        Ok(Self {
            frame_id,
            width,
            height,
            level,
            runs,
            area,
        })
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn first_index(&self) -> u32 {
        self.runs[0].start
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().flat_map(|r| r.start..r.end())
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.indices().map(move |i| (i % w, i / w))
    }

    pub fn contains_index(&self, index: u32) -> bool {
        let pos = self.runs.partition_point(|r| r.end() <= index);
        pos < self.runs.len() && self.runs[pos].start <= index
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height && self.contains_index(v * self.width + u)
    }

    pub fn same_canvas(&self, other: &Mask2D) -> bool {
        self.frame_id == other.frame_id && self.width == other.width && self.height == other.height
    }

    /// Shared pixel count.
    pub fn intersection_area(&self, other: &Mask2D) -> u64 {
        let (a, b) = (&self.runs, &other.runs);
        let (mut i, mut j, mut n) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].start.max(b[j].start);
            let hi = a[i].end().min(b[j].end());
            if hi > lo {
                n += (hi - lo) as u64;
            }
            if a[i].end() < b[j].end() {
                i += 1;
            } else {
                j += 1;
            }
        }
        n
    }

    /// Tight half-open bounding box of the set pixels.
    pub fn bbox(&self) -> PixelRect {
        let w = self.width;
        let mut r = PixelRect {
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
        };
        for run in &self.runs {
            // a run may wrap across rows
            let (mut idx, end) = (run.start, run.end());
            while idx < end {
                let y = idx / w;
                let x_start = idx % w;
                let row_end = ((y + 1) * w).min(end);
                let x_end = x_start + (row_end - idx);
                r.x0 = r.x0.min(x_start);
                r.x1 = r.x1.max(x_end);
                r.y0 = r.y0.min(y);
                r.y1 = r.y1.max(y + 1);
                idx = row_end;
            }
        }
        r
    }

    pub fn with_level(mut self, level: u16) -> Self {
        self.level = level;
        self
    }
}
