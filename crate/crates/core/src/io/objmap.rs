use std::path::{Path, PathBuf};

use super::{read_file, write_file, ByteReader, ByteWriter, IoError};
use crate::fusion::{Object3D, SourceMask};
use crate::geometry::Vec3;

pub const OBJECT_MAP_MAGIC: &[u8; 4] = b"OVOM";

/// Fused objects plus the hash of the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMap {
    /// Hex sha256 of the run configuration.
    pub config_hash: String,
    pub voxel_size: f64,
    pub objects: Vec<Object3D>,
}

impl ObjectMap {
    pub fn dim(&self) -> usize {
        self.objects.first().map_or(0, |o| o.dim())
    }

    /// Path of the text summary written next to `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".txt");
        PathBuf::from(s)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "config_hash {}\nvoxel_size {}\nobjects {}\n",
            self.config_hash,
            self.voxel_size,
            self.objects.len()
        );
        for o in &self.objects {
            let c = o.centroid();
            let b = o.bounding_box();
            out.push_str(&format!(
                "object {} points {} voxels {} merged {} sources {} centroid {:.4} {:.4} {:.4} extent {:.4} {:.4} {:.4}\n",
                o.id,
                o.points.len(),
                o.voxels.len(),
                o.merged_count,
                o.sources.len(),
                c.x,
                c.y,
                c.z,
                b.extent().x,
                b.extent().y,
                b.extent().z
            ));
        }
        out
    }
}

fn hash_bytes(path: &Path, hex_hash: &str) -> Result<[u8; 32], IoError> {
    let v = hex::decode(hex_hash)
        .map_err(|e| IoError::invalid(path, format!("config hash: {e}")))?;
    v.try_into()
        .map_err(|_| IoError::invalid(path, "config hash must be 32 bytes"))
}

/// Writes the binary map and its text sidecar.
///
/// Layout after the header: 32-byte config hash, voxel size (`f64`),
/// embedding dim, object count; per object its id, merged count, point
/// count, points as `f64` triples, the embedding, source count and
/// `(frame, mask, fragment)` triples.
pub fn write_object_map(path: &Path, map: &ObjectMap) -> Result<(), IoError> {
    let mut w = ByteWriter::new(OBJECT_MAP_MAGIC);
    w.buf.extend_from_slice(&hash_bytes(path, &map.config_hash)?);
    w.f64(map.voxel_size);
    let dim = map.dim();
    w.u32(dim as u32);
    w.u32(map.objects.len() as u32);
    for o in &map.objects {
        if o.dim() != dim {
            return Err(IoError::invalid(path, "objects differ in embedding dimension"));
        }
        w.u32(o.id);
        w.u32(o.merged_count);
        w.u32(o.points.len() as u32);
        for p in &o.points {
            w.f64(p.x);
            w.f64(p.y);
            w.f64(p.z);
        }
        for &e in &o.embedding {
            w.f32(e);
        }
        w.u32(o.sources.len() as u32);
        for s in &o.sources {
            w.u32(s.frame_id);
            w.u32(s.mask_index);
            w.u32(s.fragment);
        }
    }
    write_file(path, &w.buf)?;
    write_file(&ObjectMap::sidecar_path(path), map.summary().as_bytes())
}

pub fn read_object_map(path: &Path) -> Result<ObjectMap, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, OBJECT_MAP_MAGIC)?;
    let config_hash = hex::encode(r.take(32)?);
    let voxel_size = r.f64()?;
    if !(voxel_size > 0.0) {
        return Err(r.error(40, "voxel size must be positive"));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut objects = Vec::with_capacity(count.min(bytes.len() / 16));
    for _ in 0..count {
        let at = r.offset();
        let id = r.u32()?;
        let merged = r.u32()?;
        let n = r.u32()? as usize;
        let mut points = Vec::with_capacity(n.min(bytes.len() / 24));
        for _ in 0..n {
            points.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
        }
        let embedding = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        let ns = r.u32()? as usize;
        let mut sources = Vec::with_capacity(ns.min(bytes.len() / 12));
        for _ in 0..ns {
            sources.push(SourceMask {
                frame_id: r.u32()?,
                mask_index: r.u32()?,
                fragment: r.u32()?,
            });
        }
        let obj = Object3D::from_parts(id, points, embedding, sources, merged, voxel_size)
            .map_err(|e| r.error(at, format!("object {id}: {e}")))?;
        objects.push(obj);
    }
    r.finish()?;
    Ok(ObjectMap {
        config_hash,
        voxel_size,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("objects.ovom");
        let src = SourceMask {
            frame_id: 2,
            mask_index: 1,
            fragment: 0,
        };
        let a = Object3D::new(
            0,
            vec![Vec3::new(0.0, 0.1, 0.2), Vec3::new(0.3, 0.1, 0.2)],
            vec![0.6, 0.8],
            src,
            0.05,
        )
        .unwrap();
        let map = ObjectMap {
            config_hash: "ab".repeat(32),
            voxel_size: 0.05,
            objects: vec![a],
        };
        write_object_map(&p, &map).unwrap();
        let back = read_object_map(&p).unwrap();
        assert_eq!(back.objects[0].points, map.objects[0].points);
        assert_eq!(back.objects[0].voxels, map.objects[0].voxels);
        assert_eq!(back.config_hash, map.config_hash);
        let q = dir.path().join("again.ovom");
        write_object_map(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        let side = std::fs::read_to_string(ObjectMap::sidecar_path(&p)).unwrap();
        assert!(side.starts_with(&format!("config_hash {}", "ab".repeat(32))));
        assert!(side.contains("objects 1\n"));
    }
}
