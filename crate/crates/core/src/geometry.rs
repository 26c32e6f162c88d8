//! Pinhole camera model, back-projection, voxel occupancy and overlap measures.
//!
//! Conventions: poses are camera-to-world, the camera looks down +z with +x
//! right and +y down, and depth is z-depth (not ray length). Pixel `(u, v)`
//! refers to integer image coordinates without a half-pixel offset.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.05;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth at pixel ({u}, {v})")]
    InvalidDepth { u: u32, v: u32 },
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: i64,
        v: i64,
        width: u32,
        height: u32,
    },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("voxel sizes differ: {0} vs {1}")]
    SizeMismatch(f64, f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid voxel size {0}")]
    InvalidVoxelSize(f64),
    #[error("depth map is {got_w}x{got_h}, intrinsics expect {want_w}x{want_h}")]
    DepthShape {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && u < self.width as i64 && v < self.height as i64
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let rtr = self.rotation.transpose() * self.rotation;
        let err = (rtr - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation determinant {det} != 1"
            )));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` as the world up hint.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("view direction parallel to up".into()))?;
        let y = z.cross(&x);
        Self::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    /// 4x4 row-major homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidPose(
                "last row must be 0 0 0 1".into(),
            ));
        }
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Self::new(rotation, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }
}

/// Row-major z-depth image in meters. Zero and NaN mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn valid_at(&self, u: u32, v: u32) -> Option<f64> {
        let d = self.get(u, v);
        is_valid_depth(d).then_some(d as f64)
    }
}

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u32,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub rgb_path: Option<std::path::PathBuf>,
}

impl Frame {
    pub fn new(
        id: u32,
        depth: DepthMap,
        intrinsics: Intrinsics,
        pose: Pose,
    ) -> Result<Self, GeometryError> {
        if depth.width != intrinsics.width || depth.height != intrinsics.height {
            return Err(GeometryError::DepthShape {
                got_w: depth.width,
                got_h: depth.height,
                want_w: intrinsics.width,
                want_h: intrinsics.height,
            });
        }
        Ok(Self {
            id,
            depth,
            intrinsics,
            pose,
            rgb_path: None,
        })
    }

    pub fn with_rgb(mut self, path: impl Into<std::path::PathBuf>) -> Self {
        self.rgb_path = Some(path.into());
        self
    }
}

/// Lifts pixel `(u, v)` to a world-frame point using the frame's depth.
pub fn back_project(u: i64, v: i64, frame: &Frame) -> Result<Vec3, GeometryError> {
    let k = &frame.intrinsics;
    if !k.contains(u, v) {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    let (u, v) = (u as u32, v as u32);
    let d = frame
        .depth
        .valid_at(u, v)
        .ok_or(GeometryError::InvalidDepth { u, v })?;
    Ok(back_project_depth(u as f64, v as f64, d, k, &frame.pose))
}

/// Back-projection with an explicit depth; no validity checks.
#[inline]
pub fn back_project_depth(u: f64, v: f64, depth: f64, k: &Intrinsics, pose: &Pose) -> Vec3 {
    let cam = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    pose.camera_to_world(&cam)
}

/// Projects a world point into the frame. Returns the sub-pixel location and
/// camera-frame depth; the pixel may lie outside the image.
pub fn project(point: &Vec3, frame: &Frame) -> Result<([f64; 2], f64), GeometryError> {
    project_with(point, &frame.intrinsics, &frame.pose)
}

#[inline]
pub fn project_with(
    point: &Vec3,
    k: &Intrinsics,
    pose: &Pose,
) -> Result<([f64; 2], f64), GeometryError> {
    let cam = pose.world_to_camera(point);
    if !(cam.z > 0.0) {
        return Err(GeometryError::BehindCamera { z: cam.z });
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    Ok(([u, v], cam.z))
}

pub type VoxelKey = [i32; 3];

/// Sparse voxel occupancy. Keys are kept sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    voxel_size: f64,
    occupied: Vec<VoxelKey>,
}

#[inline]
pub fn voxel_key(p: &Vec3, voxel_size: f64) -> VoxelKey {
    [
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    ]
}

impl VoxelSet {
    /// Builds a set from arbitrary keys; sorts and removes duplicates.
    pub fn from_keys(voxel_size: f64, mut keys: Vec<VoxelKey>) -> Result<Self, GeometryError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GeometryError::InvalidVoxelSize(voxel_size));
        }
        keys.sort_unstable();
        keys.dedup();
        Ok(Self {
            voxel_size,
            occupied: keys,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.occupied.binary_search(key).is_ok()
    }

    pub fn intersection_count(&self, other: &VoxelSet) -> usize {
        let (a, b) = (&self.occupied, &other.occupied);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn union(&self, other: &VoxelSet) -> Result<VoxelSet, GeometryError> {
        check_same_size(self, other)?;
        let (a, b) = (&self.occupied, &other.occupied);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Ok(VoxelSet {
            voxel_size: self.voxel_size,
            occupied: out,
        })
    }
}

fn check_same_size(a: &VoxelSet, b: &VoxelSet) -> Result<(), GeometryError> {
    if a.voxel_size != b.voxel_size {
        return Err(GeometryError::SizeMismatch(a.voxel_size, b.voxel_size));
    }
    Ok(())
}

pub fn voxelize(points: &[Vec3], voxel_size: f64) -> Result<VoxelSet, GeometryError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(GeometryError::InvalidVoxelSize(voxel_size));
    }
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let keys = points.iter().map(|p| voxel_key(p, voxel_size)).collect();
    VoxelSet::from_keys(voxel_size, keys)
}

/// Intersection-over-volume in both directions, with the shared count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelOverlap {
    pub intersection: usize,
    pub len_a: usize,
    pub len_b: usize,
}

impl VoxelOverlap {
    pub fn iov_ab(&self) -> f64 {
        self.intersection as f64 / self.len_a as f64
    }

    pub fn iov_ba(&self) -> f64 {
        self.intersection as f64 / self.len_b as f64
    }

    pub fn ratios(&self) -> (f64, f64) {
        (self.iov_ab(), self.iov_ba())
    }
}

pub fn voxel_overlap(a: &VoxelSet, b: &VoxelSet) -> Result<VoxelOverlap, GeometryError> {
    check_same_size(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    Ok(VoxelOverlap {
        intersection: a.intersection_count(b),
        len_a: a.len(),
        len_b: b.len(),
    })
}

/// `(|a∩b| / |a|, |a∩b| / |b|)` over occupied voxel counts.
pub fn voxel_iov(a: &VoxelSet, b: &VoxelSet) -> Result<(f64, f64), GeometryError> {
    voxel_overlap(a, b).map(|o| o.ratios())
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.iter().zip(max.iter()).all(|(a, b)| a <= b));
        Self { min, max }
    }

    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    pub fn volume(&self) -> f64 {
        let e = self.max - self.min;
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            min: self.min + offset,
            max: self.max + offset,
        }
    }
}

pub fn box_iou3d(a: &Box3, b: &Box3) -> f64 {
    let lo = a.min.sup(&b.min);
    let hi = a.max.inf(&b.max);
    let e = hi - lo;
    if e.x <= 0.0 || e.y <= 0.0 || e.z <= 0.0 {
        return if a == b && a.volume() == 0.0 { 1.0 } else { 0.0 };
    }
    let inter = e.x * e.y * e.z;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
