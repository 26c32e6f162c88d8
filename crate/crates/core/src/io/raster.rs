use std::path::Path;

use super::{read_file, read_text, write_file, ByteReader, ByteWriter, IoError};
use crate::geometry::{is_valid_depth, DepthMap, Pose, Vec3};

pub const DEPTH_MAGIC: &[u8; 4] = b"OVDP";
pub const LABEL_MAGIC: &[u8; 4] = b"OVLB";
pub const GT_POINTS_MAGIC: &[u8; 4] = b"OVGP";

/// Reads a 16-bit depth image. Stored units divided by `depth_scale` give
/// meters; zero marks a missing reading.
pub fn read_depth(path: &Path, depth_scale: f64) -> Result<DepthMap, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, DEPTH_MAGIC)?;
    let w = r.u32()?;
    let h = r.u32()?;
    let n = w as usize * h as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = r.u16()?;
        data.push(if raw == 0 {
            0.0
        } else {
            (raw as f64 / depth_scale) as f32
        });
    }
    r.finish()?;
    Ok(DepthMap::new(w, h, data))
}

/// Inverse of [`read_depth`]. Invalid depths are stored as zero; values
/// beyond the 16-bit range saturate.
pub fn write_depth(path: &Path, depth: &DepthMap, depth_scale: f64) -> Result<(), IoError> {
    let mut w = ByteWriter::new(DEPTH_MAGIC);
    w.u32(depth.width);
    w.u32(depth.height);
    for &d in &depth.data {
        let raw = if is_valid_depth(d) {
            (d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16
        } else {
            0
        };
        w.u16(raw);
    }
    write_file(path, &w.buf)
}

/// Per-pixel instance ids; zero is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.data[(v * self.width + u) as usize]
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, LABEL_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    let data = (0..width as usize * height as usize)
        .map(|_| r.u16())
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(LabelMap {
        width,
        height,
        data,
    })
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), IoError> {
    let mut w = ByteWriter::new(LABEL_MAGIC);
    w.u32(labels.width);
    w.u32(labels.height);
    for &l in &labels.data {
        w.u16(l);
    }
    write_file(path, &w.buf)
}

/// Reads a camera-to-world pose written as four rows of four numbers.
pub fn read_pose(path: &Path) -> Result<Pose, IoError> {
    let text = read_text(path)?;
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if rows.len() != 4 {
        return Err(IoError::invalid(
            path,
            format!("expected 4 matrix rows, found {}", rows.len()),
        ));
    }
    let mut m = [[0.0; 4]; 4];
    for (r, (lineno, line)) in rows.iter().enumerate() {
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 4 {
            return Err(IoError::syntax(path, lineno + 1, "expected 4 numbers"));
        }
        for (c, v) in vals.iter().enumerate() {
            m[r][c] = v
                .parse()
                .map_err(|_| IoError::syntax(path, lineno + 1, format!("bad number {v:?}")))?;
        }
    }
    Pose::from_matrix(&m).map_err(|e| IoError::invalid(path, e.to_string()))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<(), IoError> {
    let text: String = pose
        .to_matrix()
        .iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            cells.join(" ") + "\n"
        })
        .collect();
    write_file(path, text.as_bytes())
}

/// A ground-truth surface point and its instance id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPoint {
    pub position: Vec3,
    pub instance: u32,
}

pub fn read_gt_points(path: &Path) -> Result<Vec<GtPoint>, IoError> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::open(path, &bytes, GT_POINTS_MAGIC)?;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(bytes.len() / 28));
    for _ in 0..n {
        let position = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        out.push(GtPoint {
            position,
            instance: r.u32()?,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_gt_points(path: &Path, points: &[GtPoint]) -> Result<(), IoError> {
    let mut w = ByteWriter::new(GT_POINTS_MAGIC);
    w.u32(points.len() as u32);
    for p in points {
        w.f64(p.position.x);
        w.f64(p.position.y);
        w.f64(p.position.z);
        w.u32(p.instance);
    }
    write_file(path, &w.buf)
}
