use std::path::Path;

use super::{read_file, write_file, ByteReader, ByteWriter, IoError};
use crate::context_embedding::CropKind;
use crate::mask::{Mask2D, Run};

pub const MASK_MAGIC: &[u8; 4] = b"OVMK";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"OVEM";

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub frame_id: u32,
    /// Position among the raw masks of the same frame.
    pub mask_index: u32,
    pub mask: Mask2D,
}

/// Raw candidate masks as run-length records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskArchive {
    pub records: Vec<MaskRecord>,
}

impl MaskArchive {
    pub fn push(&mut self, mask: Mask2D) {
        let mask_index = self
            .records
            .iter()
            .filter(|r| r.frame_id == mask.frame_id)
            .count() as u32;
        self.records.push(MaskRecord {
            frame_id: mask.frame_id,
            mask_index,
            mask,
        });
    }
}

/// Record layout: frame id, mask index, level (`u16`), width, height, run
/// count, then `(start, len)` pairs.
pub fn read_masks(path: &Path) -> Result<MaskArchive, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, MASK_MAGIC)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(bytes.len() / 22));
    for _ in 0..count {
        let at = r.offset();
        let frame_id = r.u32()?;
        let mask_index = r.u32()?;
        let level = r.u16()?;
        let width = r.u32()?;
        let height = r.u32()?;
        let n_runs = r.u32()? as usize;
        let mut runs = Vec::with_capacity(n_runs.min(bytes.len() / 8));
        for _ in 0..n_runs {
            runs.push(Run {
                start: r.u32()?,
                len: r.u32()?,
            });
        }
        let mask = Mask2D::from_runs(frame_id, width, height, level, runs)
            .map_err(|e| r.error(at, format!("mask record: {e}")))?;
        records.push(MaskRecord {
            frame_id,
            mask_index,
            mask,
        });
    }
    r.finish()?;
    Ok(MaskArchive { records })
}

pub fn write_masks(path: &Path, archive: &MaskArchive) -> Result<(), IoError> {
    let mut w = ByteWriter::new(MASK_MAGIC);
    w.u32(archive.records.len() as u32);
    for rec in &archive.records {
        let m = &rec.mask;
        w.u32(rec.frame_id);
        w.u32(rec.mask_index);
        w.u16(m.level);
        w.u32(m.width);
        w.u32(m.height);
        w.u32(m.runs().len() as u32);
        for run in m.runs() {
            w.u32(run.start);
            w.u32(run.len);
        }
    }
    write_file(path, &w.buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub frame_id: u32,
    pub mask_index: u32,
    /// `5 * dim` values, one block per crop in the archive's crop order.
    pub values: Vec<f32>,
}

/// Five crop embeddings per mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: usize,
    pub crop_order: [CropKind; 5],
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            crop_order: CropKind::ALL,
            records: Vec::new(),
        }
    }

    /// Appends one mask's crops, given in canonical [`CropKind::ALL`] order.
    pub fn push(&mut self, frame_id: u32, mask_index: u32, crops: &[Vec<f32>; 5]) {
        let mut values = Vec::with_capacity(5 * self.dim);
        for kind in self.crop_order {
            let c = &crops[kind as usize];
            assert_eq!(c.len(), self.dim, "crop embedding dimension");
            values.extend_from_slice(c);
        }
        self.records.push(EmbeddingRecord {
            frame_id,
            mask_index,
            values,
        });
    }

    /// One record's crops in canonical order.
    pub fn crops(&self, rec: &EmbeddingRecord) -> [Vec<f32>; 5] {
        let mut out: [Vec<f32>; 5] = Default::default();
        for (slot, kind) in self.crop_order.iter().enumerate() {
            out[*kind as usize] = rec.values[slot * self.dim..(slot + 1) * self.dim].to_vec();
        }
        out
    }
}

/// Header: dim, count and five crop-kind codes; then per record the frame
/// id, mask index and `5 * dim` `f32` values.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingArchive, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, EMBEDDING_MAGIC)?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(r.error(8, "embedding dimension is zero"));
    }
    let count = r.u32()? as usize;
    let order_at = r.offset();
    let mut crop_order = CropKind::ALL;
    let mut seen = [false; 5];
    for slot in crop_order.iter_mut() {
        let code = r.u8()?;
        let kind = CropKind::from_code(code)
            .ok_or_else(|| r.error(order_at, format!("unknown crop code {code}")))?;
        if std::mem::replace(&mut seen[kind as usize], true) {
            return Err(r.error(order_at, "crop order repeats a crop"));
        }
        *slot = kind;
    }
    let mut records = Vec::with_capacity(count.min(bytes.len() / (8 + 20 * dim)));
    for _ in 0..count {
        let frame_id = r.u32()?;
        let mask_index = r.u32()?;
        let values = (0..5 * dim).map(|_| r.f32()).collect::<Result<_, _>>()?;
        records.push(EmbeddingRecord {
            frame_id,
            mask_index,
            values,
        });
    }
    r.finish()?;
    Ok(EmbeddingArchive {
        dim,
        crop_order,
        records,
    })
}

pub fn write_embeddings(path: &Path, archive: &EmbeddingArchive) -> Result<(), IoError> {
    let mut w = ByteWriter::new(EMBEDDING_MAGIC);
    w.u32(archive.dim as u32);
    w.u32(archive.records.len() as u32);
    for k in archive.crop_order {
        w.u8(k as u8);
    }
    for rec in &archive.records {
        assert_eq!(rec.values.len(), 5 * archive.dim, "record length");
        w.u32(rec.frame_id);
        w.u32(rec.mask_index);
        for &v in &rec.values {
            w.f32(v);
        }
    }
    write_file(path, &w.buf)
}
