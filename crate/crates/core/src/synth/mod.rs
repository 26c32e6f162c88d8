//! Synthetic scenes rendered analytically from boxes and spheres.
//!
//! Output uses the standard on-disk formats, so synthetic scenes go through
//! exactly the same loaders and pipeline as captured ones.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context_embedding::CropKind;
use crate::gateway::{GatewayError, LanguageGateway, MockGateway};
use crate::geometry::{back_project, Box3, DepthMap, Frame, GeometryError, Intrinsics, Pose, Vec3};
use crate::io::{
    write_depth, write_embeddings, write_gt_points, write_gt_table, write_labels, write_masks,
    write_pose, write_queries, EmbeddingArchive, FrameEntry, GtObject, GtPoint, IoError,
    LabelMap, MaskArchive, QueryRecord, SceneManifest,
};
use crate::labeling::{fill_template, DEFAULT_PROMPT_TEMPLATE};
use crate::mask::Mask2D;

mod oracle;
mod queries;

pub use oracle::OracleGateway;
pub use queries::{generate_queries, QueryKind, SynthQuery};

/// Degrees above the horizon for generated cameras.
pub const CAMERA_ELEVATION: f64 = 45.0;

pub const DEFAULT_CLASSES: [&str; 8] = [
    "chair", "table", "lamp", "sofa", "cabinet", "trashcan", "bed", "plant",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    pub fn bounds(&self) -> Box3 {
        match *self {
            Shape::Box { center, half } => {
                let (c, h) = (Vec3::from(center), Vec3::from(half));
                Box3::new(c - h, c + h)
            }
            Shape::Sphere { center, radius } => {
                let (c, r) = (Vec3::from(center), Vec3::repeat(radius));
                Box3::new(c - r, c + r)
            }
        }
    }

    /// Nearest hit `t > 0` along `origin + t * dir` and the surface normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Box { center, half } => {
                let (lo, hi) = (
                    Vec3::from(center) - Vec3::from(half),
                    Vec3::from(center) + Vec3::from(half),
                );
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                let mut sign = 0.0;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (lo[i] - origin[i]) / dir[i];
                    let b = (hi[i] - origin[i]) / dir[i];
                    let (near, far) = if a < b { (a, b) } else { (b, a) };
                    if near > t0 {
                        t0 = near;
                        axis = i;
                        sign = if dir[i] > 0.0 { -1.0 } else { 1.0 };
                    }
                    t1 = t1.min(far);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut n = Vec3::zeros();
                n[axis] = sign;
                Some((t0, n))
            }
            Shape::Sphere { center, radius } => {
                let c = Vec3::from(center);
                let oc = origin - c;
                let a = dir.dot(dir);
                let b = 2.0 * oc.dot(dir);
                let k = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * k;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                if t <= 0.0 {
                    return None;
                }
                Some((t, (origin + dir * t - c) / radius))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub class: String,
    #[serde(flatten)]
    pub shape: Shape,
    /// Direction the front faces about +z, radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl CameraSpec {
    pub fn pose(&self) -> Result<Pose, GeometryError> {
        Pose::look_at(Vec3::from(self.eye), Vec3::from(self.target), Vec3::z())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSceneSpec {
    pub seed: u64,
    pub scene_id: String,
    /// Objects must lie within `[-extent, extent]` horizontally.
    pub extent: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub objects: Vec<Primitive>,
    pub cameras: Vec<CameraSpec>,
    /// Standard deviation of additive depth noise, meters.
    #[serde(default)]
    pub depth_noise: f64,
    /// Probability of dropping an object's whole-object mask in a frame.
    #[serde(default)]
    pub mask_dropout: f64,
    pub embed_dim: usize,
    #[serde(default)]
    pub embed_seed: u64,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    #[serde(default = "default_background")]
    pub background_prompt: String,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    #[serde(default = "default_true")]
    pub write_rgb: bool,
    /// Pixels whose view ray meets the surface with `|cos|` below this get
    /// no depth, like a real sensor at grazing incidence. Labels are kept.
    #[serde(default = "default_min_incidence")]
    pub min_incidence_cos: f64,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.into()
}

fn default_background() -> String {
    "a photo of a room.".into()
}

fn default_depth_scale() -> f64 {
    1000.0
}

fn default_min_incidence() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.extent > 0.0) {
            return bad("extent must be positive".into());
        }
        if self.objects.is_empty() {
            return bad("need at least one object".into());
        }
        if self.objects.len() >= u16::MAX as usize {
            return bad("too many objects".into());
        }
        if self.cameras.len() < 2 {
            return bad("need at least two cameras".into());
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return bad("image size and focal length must be positive".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.min_incidence_cos) {
            return bad("min_incidence_cos must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.mask_dropout) || !(self.depth_noise >= 0.0) {
            return bad("mask_dropout must lie in [0, 1] and depth_noise be >= 0".into());
        }
        fill_template(&self.prompt_template, "x").map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        for (i, o) in self.objects.iter().enumerate() {
            let b = o.shape.bounds();
            let size_ok = match o.shape {
                Shape::Box { half, .. } => half.iter().all(|h| *h > 0.0),
                Shape::Sphere { radius, .. } => radius > 0.0,
            };
            if !size_ok {
                return bad(format!("object {i} has non-positive size"));
            }
            if b.min.x < -self.extent
                || b.min.y < -self.extent
                || b.max.x > self.extent
                || b.max.y > self.extent
            {
                return bad(format!("object {i} leaves the room extent"));
            }
            if o.class.trim().is_empty() || o.class.contains(['\t', '\n']) {
                return bad(format!("object {i} has an unusable class name"));
            }
        }
        for c in &self.cameras {
            c.pose()?;
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    /// A random tabletop-free room: `n_objects` primitives on a jittered
    /// 3x2 grid with elevated cameras on a 90 degree arc looking at it.
    pub fn random(seed: u64, n_objects: usize, n_frames: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing = 1.4;
        let mut cells: Vec<(f64, f64)> = (0..6)
            .map(|i| ((i % 3) as f64 - 1.0, (i / 3) as f64 - 0.5))
            .map(|(x, y)| (x * spacing, y * spacing))
            .collect();
        // partial Fisher-Yates
        for i in 0..cells.len() {
            let j = rng.random_range(i..cells.len());
            cells.swap(i, j);
        }
        let objects = cells
            .iter()
            .take(n_objects.clamp(1, 6))
            .map(|&(x, y)| {
                let class = DEFAULT_CLASSES[rng.random_range(0..DEFAULT_CLASSES.len())];
                let cx = x + rng.random_range(-0.15..0.15);
                let cy = y + rng.random_range(-0.15..0.15);
                let shape = if rng.random_bool(0.3) {
                    let r = rng.random_range(0.18..0.3);
                    Shape::Sphere {
                        center: [cx, cy, r],
                        radius: r,
                    }
                } else {
                    let hz = rng.random_range(0.12..0.3);
                    Shape::Box {
                        center: [cx, cy, hz],
                        half: [rng.random_range(0.2..0.4), rng.random_range(0.2..0.4), hz],
                    }
                };
                Primitive {
                    class: class.into(),
                    shape,
                    yaw: None,
                }
            })
            .collect();
        let azimuth0 = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            seed,
            scene_id: format!("synth{seed}"),
            extent: 3.0,
            width: 320,
            height: 240,
            focal: 240.0,
            objects,
            cameras: arc_cameras(n_frames.max(2), azimuth0, std::f64::consts::FRAC_PI_4, 4.6, CAMERA_ELEVATION.to_radians()),
            depth_noise: 0.0,
            mask_dropout: 0.0,
            embed_dim: 64,
            embed_seed: 0,
            prompt_template: default_template(),
            background_prompt: default_background(),
            depth_scale: default_depth_scale(),
            write_rgb: true,
            min_incidence_cos: default_min_incidence(),
        }
    }
}

impl SynthSceneSpec {
    /// A room laid out for referring expressions: a cabinet whose front
    /// faces the cameras, two trashcans, two tables and an armchair on a
    /// jittered 3x2 grid.
    pub fn retrieval(seed: u64) -> Self {
        let mut s = Self::random(seed, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let step = std::f64::consts::FRAC_PI_4;
        let azimuth0 = rng.random_range(0..8) as f64 * step;
        s.cameras = arc_cameras(8, azimuth0, step, 4.6, CAMERA_ELEVATION.to_radians());
        let mut layout = ["cabinet", "trashcan", "trashcan", "table", "table", "armchair"];
        for i in 0..layout.len() {
            let j = rng.random_range(i..layout.len());
            layout.swap(i, j);
        }
        for (o, class) in s.objects.iter_mut().zip(layout) {
            let c = o.shape.bounds().center();
            let (cx, cy) = (c.x, c.y);
            let (shape, yaw) = match class {
                "cabinet" => (box_on_floor(cx, cy, [0.3, 0.3, 0.35]), Some(azimuth0)),
                "trashcan" => (box_on_floor(cx, cy, [0.18, 0.18, 0.25]), None),
                "table" => (box_on_floor(cx, cy, [0.4, 0.3, 0.2]), None),
                _ => (
                    Shape::Sphere {
                        center: [cx, cy, 0.28],
                        radius: 0.28,
                    },
                    None,
                ),
            };
            *o = Primitive {
                class: class.into(),
                shape,
                yaw,
            };
        }
        s.scene_id = format!("retrieval{seed}");
        s
    }
}

fn box_on_floor(x: f64, y: f64, half: [f64; 3]) -> Shape {
    Shape::Box {
        center: [x, y, half[2]],
        half,
    }
}

/// `n` cameras spread evenly over `[azimuth0 - half_span, azimuth0 +
/// half_span]`, at `distance` from the origin and `elevation` above the
/// horizon, all looking at the origin.
pub fn arc_cameras(n: usize, azimuth0: f64, half_span: f64, distance: f64, elevation: f64) -> Vec<CameraSpec> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let az = azimuth0 - half_span + 2.0 * half_span * t;
            let h = distance * elevation.cos();
            CameraSpec {
                eye: [h * az.cos(), h * az.sin(), distance * elevation.sin()],
                target: [0.0, 0.0, 0.0],
            }
        })
        .collect()
}

/// Exact z-depth of the nearest primitive per pixel (zero where the ray
/// misses or grazes) and the 1-based instance id hit.
pub fn render(spec: &SynthSceneSpec, pose: &Pose) -> (DepthMap, LabelMap, Vec<Vec3>) {
    let k = spec.intrinsics();
    let mut depth = DepthMap::filled(k.width, k.height, 0.0);
    let mut labels = LabelMap::new(k.width, k.height);
    let mut normals = vec![Vec3::zeros(); k.pixel_count()];
    let origin = pose.translation;
    for v in 0..k.height {
        for u in 0..k.width {
            let cam = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir = pose.rotation * cam;
            let mut best: Option<(f64, usize, Vec3)> = None;
            for (i, o) in spec.objects.iter().enumerate() {
                if let Some((t, n)) = o.shape.intersect(&origin, &dir) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, i, n));
                    }
                }
            }
            if let Some((t, i, n)) = best {
                let idx = (v * k.width + u) as usize;
                if n.dot(&dir).abs() >= spec.min_incidence_cos * dir.norm() {
                    // with cam.z == 1 the ray parameter is the z-depth
                    depth.data[idx] = t as f32;
                }
                labels.data[idx] = (i + 1) as u16;
                normals[idx] = n;
            }
        }
    }
    (depth, labels, normals)
}

/// Applies the on-disk 16-bit quantization so in-memory frames match what
/// a loader reads back.
pub fn quantize_depth(depth: &DepthMap, scale: f64) -> DepthMap {
    let data = depth
        .data
        .iter()
        .map(|&d| {
            if crate::geometry::is_valid_depth(d) {
                let raw = (d as f64 * scale).round().clamp(0.0, u16::MAX as f64) as u16;
                if raw == 0 {
                    0.0
                } else {
                    (raw as f64 / scale) as f32
                }
            } else {
                0.0
            }
        })
        .collect();
    DepthMap::new(depth.width, depth.height, data)
}

pub fn class_color(class: &str) -> [u8; 3] {
    let h = Sha256::digest(class.as_bytes());
    [64 + h[0] / 2, 64 + h[1] / 2, 64 + h[2] / 2]
}

fn shade(spec: &SynthSceneSpec, labels: &LabelMap, normals: &[Vec3]) -> RgbImage {
    let light = Vec3::new(0.3, 0.2, 1.0).normalize();
    RgbImage::from_fn(labels.width, labels.height, |u, v| {
        let idx = (v * labels.width + u) as usize;
        match labels.data[idx] {
            0 => Rgb([128, 128, 128]),
            id => {
                let base = class_color(&spec.objects[id as usize - 1].class);
                let s = 0.55 + 0.45 * normals[idx].dot(&light).abs();
                Rgb(base.map(|c| (c as f64 * s).round().min(255.0) as u8))
            }
        }
    })
}

/// Whole-object mask plus halves and quadrants of its bounding box.
fn object_masks(
    frame_id: u32,
    labels: &LabelMap,
    instance: u16,
    keep_whole: bool,
) -> Vec<Mask2D> {
    let (w, h) = (labels.width, labels.height);
    let pixels: Vec<(u32, u32)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .filter(|&(u, v)| labels.get(u, v) == instance)
        .collect();
    if pixels.is_empty() {
        return Vec::new();
    }
    let (x0, x1) = pixels.iter().fold((u32::MAX, 0), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pixels.iter().fold((u32::MAX, 0), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (mx, my) = ((x0 + x1).div_ceil(2), (y0 + y1).div_ceil(2));
    let mut out = Vec::new();
    let mut push = |level: u16, pred: &dyn Fn(&(u32, u32)) -> bool| {
        let sel: Vec<(u32, u32)> = pixels.iter().copied().filter(|p| pred(p)).collect();
        if let Ok(m) = Mask2D::from_pixels(frame_id, w, h, level, sel) {
            out.push(m);
        }
    };
    if keep_whole {
        push(0, &|_| true);
    }
    push(1, &|p| p.0 < mx);
    push(1, &|p| p.0 >= mx);
    for (qx, qy) in [(false, false), (true, false), (false, true), (true, true)] {
        push(2, &move |p| (p.0 >= mx) == qx && (p.1 >= my) == qy);
    }
    out
}

/// Which instance each mask covers, parallel to the mask archive.
pub type MaskInstances = Vec<u16>;

/// A rendered scene held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSceneSpec,
    /// Frames with quantized depth, as a loader would see them.
    pub frames: Vec<Frame>,
    pub labels: Vec<LabelMap>,
    pub rgb: Vec<RgbImage>,
    pub masks: MaskArchive,
    pub mask_instances: MaskInstances,
    pub embeddings: EmbeddingArchive,
    pub gt: Vec<GtObject>,
    pub gt_points: Vec<GtPoint>,
}

/// Renders every camera and derives masks, embeddings and ground truth.
pub fn synth_scene(spec: &SynthSceneSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let k = spec.intrinsics();
    let embedder = MockGateway::new(spec.embed_dim, spec.embed_seed);
    let background = embedder.embed_text(&spec.background_prompt)?;
    let class_embedding = |class: &str| -> Result<Vec<f32>, SynthError> {
        let prompt = fill_template(&spec.prompt_template, class)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        Ok(embedder.embed_text(&prompt)?)
    };

    let mut frames = Vec::new();
    let mut labels_all = Vec::new();
    let mut rgb_all = Vec::new();
    let mut masks = MaskArchive::default();
    let mut mask_instances = Vec::new();
    let mut embeddings = EmbeddingArchive::new(spec.embed_dim);
    let mut gt_points = Vec::new();

    for (fi, cam) in spec.cameras.iter().enumerate() {
        let frame_id = fi as u32;
        let pose = cam.pose()?;
        let (mut depth, labels, normals) = render(spec, &pose);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fi as u64 + 1)));
        if spec.depth_noise > 0.0 {
            let noise = Normal::new(0.0, spec.depth_noise).expect("finite sigma");
            for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
                *d = (*d as f64 + noise.sample(&mut rng)).max(1e-3) as f32;
            }
        }
        let depth = quantize_depth(&depth, spec.depth_scale);
        let frame = Frame::new(frame_id, depth, k, pose)?;

        for (u, v) in (0..k.height).flat_map(|v| (0..k.width).map(move |u| (u, v))) {
            let id = labels.get(u, v);
            if id == 0 {
                continue;
            }
            if let Ok(p) = back_project(u as i64, v as i64, &frame) {
                gt_points.push(GtPoint {
                    position: p,
                    instance: id as u32,
                });
            }
        }

        for (oi, obj) in spec.objects.iter().enumerate() {
            let keep_whole = spec.mask_dropout == 0.0 || !rng.random_bool(spec.mask_dropout);
            let emb = class_embedding(&obj.class)?;
            let mut crops: [Vec<f32>; 5] = std::array::from_fn(|_| emb.clone());
            crops[CropKind::Surroundings as usize] = background.clone();
            for m in object_masks(frame_id, &labels, (oi + 1) as u16, keep_whole) {
                let idx = masks.records.iter().filter(|r| r.frame_id == frame_id).count() as u32;
                embeddings.push(frame_id, idx, &crops);
                masks.push(m);
                mask_instances.push((oi + 1) as u16);
            }
        }
        rgb_all.push(shade(spec, &labels, &normals));
        labels_all.push(labels);
        frames.push(frame);
    }

    let gt = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| GtObject {
            id: i as u32 + 1,
            class: o.class.clone(),
            bbox: o.shape.bounds(),
            yaw: o.yaw,
        })
        .collect();
    Ok(SynthScene {
        spec: spec.clone(),
        frames,
        labels: labels_all,
        rgb: rgb_all,
        masks,
        mask_instances,
        embeddings,
        gt,
        gt_points,
    })
}

impl SynthScene {
    /// Writes the scene under `dir` and returns the manifest path. Queries,
    /// when given, go to `queries.tsv`.
    pub fn write(&self, dir: &Path, queries: &[QueryRecord]) -> Result<PathBuf, SynthError> {
        let spec = &self.spec;
        let mut entries = Vec::new();
        for (i, frame) in self.frames.iter().enumerate() {
            let name = format!("{:06}", frame.id);
            let depth = PathBuf::from(format!("depth/{name}.d16"));
            let pose = PathBuf::from(format!("pose/{name}.txt"));
            let labels = PathBuf::from(format!("labels/{name}.ovlb"));
            write_depth(&dir.join(&depth), &frame.depth, spec.depth_scale)?;
            write_pose(&dir.join(&pose), &frame.pose)?;
            write_labels(&dir.join(&labels), &self.labels[i])?;
            let rgb = if spec.write_rgb {
                let p = PathBuf::from(format!("rgb/{name}.png"));
                let full = dir.join(&p);
                std::fs::create_dir_all(full.parent().unwrap()).map_err(|source| IoError::Io {
                    path: full.clone(),
                    source,
                })?;
                self.rgb[i].save(&full).map_err(|source| SynthError::Image {
                    path: full.clone(),
                    source,
                })?;
                Some(p)
            } else {
                None
            };
            entries.push(FrameEntry {
                id: frame.id,
                depth,
                pose,
                rgb,
                labels: Some(labels),
            });
        }
        write_masks(&dir.join("masks.ovmk"), &self.masks)?;
        write_embeddings(&dir.join("embeddings.ovem"), &self.embeddings)?;
        write_gt_table(&dir.join("gt.tsv"), &self.gt)?;
        write_gt_points(&dir.join("gt_points.ovgp"), &self.gt_points)?;
        if !queries.is_empty() {
            write_queries(&dir.join("queries.tsv"), queries)?;
        }
        let spec_text = toml::to_string(spec).expect("spec serializes");
        std::fs::write(dir.join("spec.toml"), spec_text).map_err(|source| IoError::Io {
            path: dir.join("spec.toml"),
            source,
        })?;
        let manifest = SceneManifest {
            scene_id: spec.scene_id.clone(),
            intrinsics: spec.intrinsics(),
            depth_scale: spec.depth_scale,
            stride: 1,
            masks: "masks.ovmk".into(),
            embeddings: "embeddings.ovem".into(),
            gt: Some("gt.tsv".into()),
            gt_points: Some("gt_points.ovgp".into()),
            frames: entries,
        };
        let path = dir.join("scene.txt");
        manifest.write(&path)?;
        Ok(path)
    }
}
