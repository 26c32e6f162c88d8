use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    read_depth, read_embeddings, read_gt_points, read_gt_table, read_labels, read_masks,
    read_pose, read_text, write_file, GtObject, GtPoint, IoError, LabelMap,
};
use crate::geometry::{Frame, Intrinsics};
use crate::mask::Mask2D;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub id: u32,
    pub depth: PathBuf,
    pub pose: PathBuf,
    pub rgb: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// Scene description. Paths are stored as written, relative to the
/// manifest's directory unless absolute.
///
/// ```text
/// scene_id room0
/// intrinsics <fx> <fy> <cx> <cy> <width> <height>
/// depth_scale 1000
/// stride 1
/// masks masks.ovmk
/// embeddings embeddings.ovem
/// gt gt.tsv
/// gt_points gt_points.ovgp
/// frame 0 depth=depth/000000.d16 pose=pose/000000.txt rgb=rgb/000000.png labels=labels/000000.ovlb
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub scene_id: String,
    pub intrinsics: Intrinsics,
    /// Stored depth units per meter.
    pub depth_scale: f64,
    /// Keep every `stride`-th listed frame.
    pub stride: usize,
    pub masks: PathBuf,
    pub embeddings: PathBuf,
    pub gt: Option<PathBuf>,
    pub gt_points: Option<PathBuf>,
    pub frames: Vec<FrameEntry>,
}

impl SceneManifest {
    pub fn parse(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut frames = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            if key == "frame" {
                frames.push(parse_frame(path, n, rest)?);
                continue;
            }
            if kv.insert(key, (n, rest)).is_some() {
                return Err(IoError::syntax(path, n, format!("duplicate key {key:?}")));
            }
        }
        let take = |key: &str| -> Result<(usize, &str), IoError> {
            kv.get(key)
                .copied()
                .ok_or_else(|| IoError::invalid(path, format!("missing key {key:?}")))
        };
        for key in kv.keys() {
            if !matches!(
                *key,
                "scene_id"
                    | "intrinsics"
                    | "depth_scale"
                    | "stride"
                    | "masks"
                    | "embeddings"
                    | "gt"
                    | "gt_points"
            ) {
                let (n, _) = kv[key];
                return Err(IoError::syntax(path, n, format!("unknown key {key:?}")));
            }
        }

        let (n, k) = take("intrinsics")?;
        let v: Vec<&str> = k.split_whitespace().collect();
        if v.len() != 6 {
            return Err(IoError::syntax(path, n, "intrinsics needs fx fy cx cy width height"));
        }
        let f = |s: &str| -> Result<f64, IoError> {
            s.parse()
                .map_err(|_| IoError::syntax(path, n, format!("bad number {s:?}")))
        };
        let u = |s: &str| -> Result<u32, IoError> {
            s.parse()
                .map_err(|_| IoError::syntax(path, n, format!("bad size {s:?}")))
        };
        let intrinsics = Intrinsics::new(f(v[0])?, f(v[1])?, f(v[2])?, f(v[3])?, u(v[4])?, u(v[5])?)
            .map_err(|e| IoError::syntax(path, n, e.to_string()))?;

        let depth_scale = match kv.get("depth_scale") {
            Some(&(n, s)) => s
                .parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0)
                .ok_or_else(|| IoError::syntax(path, n, "depth_scale must be a positive number"))?,
            None => 1000.0,
        };
        let stride = match kv.get("stride") {
            Some(&(n, s)) => s
                .parse::<usize>()
                .ok()
                .filter(|x| *x > 0)
                .ok_or_else(|| IoError::syntax(path, n, "stride must be a positive integer"))?,
            None => 1,
        };
        if frames.is_empty() {
            return Err(IoError::invalid(path, "no frames listed"));
        }
        if let Some(w) = frames.windows(2).find(|w: &&[FrameEntry]| w[0].id >= w[1].id) {
            return Err(IoError::invalid(
                path,
                format!("frame ids must be unique and increasing ({} then {})", w[0].id, w[1].id),
            ));
        }
        Ok(Self {
            scene_id: take("scene_id")?.1.to_string(),
            intrinsics,
            depth_scale,
            stride,
            masks: PathBuf::from(take("masks")?.1),
            embeddings: PathBuf::from(take("embeddings")?.1),
            gt: kv.get("gt").map(|(_, s)| PathBuf::from(s)),
            gt_points: kv.get("gt_points").map(|(_, s)| PathBuf::from(s)),
            frames,
        })
    }

    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let mut s = format!(
            "scene_id {}\nintrinsics {} {} {} {} {} {}\ndepth_scale {}\nstride {}\nmasks {}\nembeddings {}\n",
            self.scene_id,
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height,
            self.depth_scale,
            self.stride,
            self.masks.display(),
            self.embeddings.display()
        );
        if let Some(p) = &self.gt {
            s.push_str(&format!("gt {}\n", p.display()));
        }
        if let Some(p) = &self.gt_points {
            s.push_str(&format!("gt_points {}\n", p.display()));
        }
        for f in &self.frames {
            s.push_str(&format!(
                "frame {} depth={} pose={}",
                f.id,
                f.depth.display(),
                f.pose.display()
            ));
            if let Some(p) = &f.rgb {
                s.push_str(&format!(" rgb={}", p.display()));
            }
            if let Some(p) = &f.labels {
                s.push_str(&format!(" labels={}", p.display()));
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, self.to_text().as_bytes())
    }

    /// Entries kept after applying the stride.
    pub fn sampled_frames(&self) -> impl Iterator<Item = &FrameEntry> {
        self.frames.iter().step_by(self.stride)
    }
}

fn parse_frame(path: &Path, n: usize, rest: &str) -> Result<FrameEntry, IoError> {
    let mut parts = rest.split_whitespace();
    let id: u32 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::syntax(path, n, "frame needs a numeric id"))?;
    let (mut depth, mut pose, mut rgb, mut labels) = (None, None, None, None);
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| IoError::syntax(path, n, format!("expected key=value, got {p:?}")))?;
        let slot = match k {
            "depth" => &mut depth,
            "pose" => &mut pose,
            "rgb" => &mut rgb,
            "labels" => &mut labels,
            _ => return Err(IoError::syntax(path, n, format!("unknown frame field {k:?}"))),
        };
        *slot = Some(PathBuf::from(v));
    }
    Ok(FrameEntry {
        id,
        depth: depth.ok_or_else(|| IoError::syntax(path, n, "frame needs depth="))?,
        pose: pose.ok_or_else(|| IoError::syntax(path, n, "frame needs pose="))?,
        rgb,
        labels,
    })
}

/// A loaded, cross-checked scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    pub root: PathBuf,
    pub frames: Vec<Frame>,
    /// Raw masks per frame in mask-index order.
    pub masks: Vec<Vec<Mask2D>>,
    /// Five crop embeddings per mask, canonical crop order.
    pub crops: Vec<Vec<[Vec<f32>; 5]>>,
    pub labels: Vec<Option<LabelMap>>,
    pub gt: Vec<GtObject>,
    pub gt_points: Vec<GtPoint>,
    pub dim: usize,
}

impl Scene {
    pub fn gt_class(&self, instance: u32) -> Option<&str> {
        self.gt
            .iter()
            .find(|o| o.id == instance)
            .map(|o| o.class.as_str())
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Loads and validates everything a manifest references.
pub fn load_scene(manifest_path: &Path) -> Result<Scene, IoError> {
    let manifest = SceneManifest::parse(manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let r = |p: &Path| resolve(&root, p);

    let mut referenced = vec![r(&manifest.masks), r(&manifest.embeddings)];
    referenced.extend(manifest.gt.iter().map(|p| r(p)));
    referenced.extend(manifest.gt_points.iter().map(|p| r(p)));
    for f in &manifest.frames {
        referenced.push(r(&f.depth));
        referenced.push(r(&f.pose));
        referenced.extend(f.rgb.iter().map(|p| r(p)));
        referenced.extend(f.labels.iter().map(|p| r(p)));
    }
    if let Some(missing) = referenced.iter().find(|p| !p.exists()) {
        return Err(IoError::invalid(
            missing,
            format!("referenced by {} but does not exist", manifest_path.display()),
        ));
    }

    let k = manifest.intrinsics;
    let entries: Vec<&FrameEntry> = manifest.sampled_frames().collect();
    let loaded: Vec<(Frame, Option<LabelMap>)> = entries
        .par_iter()
        .map(|e| {
            let depth_path = r(&e.depth);
            let depth = read_depth(&depth_path, manifest.depth_scale)?;
            let pose = read_pose(&r(&e.pose))?;
            let mut frame = Frame::new(e.id, depth, k, pose)
                .map_err(|err| IoError::invalid(&depth_path, err.to_string()))?;
            if let Some(p) = &e.rgb {
                frame = frame.with_rgb(r(p));
            }
            let labels = match &e.labels {
                Some(p) => {
                    let lp = r(p);
                    let l = read_labels(&lp)?;
                    if (l.width, l.height) != (k.width, k.height) {
                        return Err(IoError::invalid(&lp, "label map size differs from intrinsics"));
                    }
                    Some(l)
                }
                None => None,
            };
            Ok((frame, labels))
        })
        .collect::<Result<_, IoError>>()?;
    let (frames, labels): (Vec<Frame>, Vec<Option<LabelMap>>) = loaded.into_iter().unzip();

    let mask_path = r(&manifest.masks);
    let emb_path = r(&manifest.embeddings);
    let masks = read_masks(&mask_path)?;
    let embs = read_embeddings(&emb_path)?;
    if masks.records.len() != embs.records.len() {
        return Err(IoError::CountMismatch {
            what: "mask records".into(),
            a_path: mask_path,
            a_count: masks.records.len(),
            b_path: emb_path,
            b_count: embs.records.len(),
        });
    }
    let listed: Vec<u32> = manifest.frames.iter().map(|f| f.id).collect();
    let slot: BTreeMap<u32, usize> = frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    let mut per_frame_masks: Vec<Vec<Mask2D>> = vec![Vec::new(); frames.len()];
    let mut per_frame_crops: Vec<Vec<[Vec<f32>; 5]>> = vec![Vec::new(); frames.len()];
    for (i, (m, e)) in masks.records.iter().zip(&embs.records).enumerate() {
        if (m.frame_id, m.mask_index) != (e.frame_id, e.mask_index) {
            return Err(IoError::invalid(
                &emb_path,
                format!(
                    "record {i} is (frame {}, mask {}) but {} has (frame {}, mask {})",
                    e.frame_id,
                    e.mask_index,
                    mask_path.display(),
                    m.frame_id,
                    m.mask_index
                ),
            ));
        }
        if !listed.contains(&m.frame_id) {
            return Err(IoError::invalid(
                &mask_path,
                format!("record {i} refers to unlisted frame {}", m.frame_id),
            ));
        }
        let Some(&s) = slot.get(&m.frame_id) else {
            continue;
        };
        if (m.mask.width, m.mask.height) != (k.width, k.height) {
            return Err(IoError::invalid(
                &mask_path,
                format!("record {i} canvas differs from intrinsics"),
            ));
        }
        if m.mask_index as usize != per_frame_masks[s].len() {
            return Err(IoError::invalid(
                &mask_path,
                format!("record {i}: mask indices of frame {} are not sequential", m.frame_id),
            ));
        }
        per_frame_masks[s].push(m.mask.clone());
        per_frame_crops[s].push(embs.crops(e));
    }

    let gt = match &manifest.gt {
        Some(p) => read_gt_table(&r(p))?,
        None => Vec::new(),
    };
    let gt_points = match &manifest.gt_points {
        Some(p) => read_gt_points(&r(p))?,
        None => Vec::new(),
    };
    Ok(Scene {
        dim: embs.dim,
        manifest,
        root,
        frames,
        masks: per_frame_masks,
        crops: per_frame_crops,
        labels,
        gt,
        gt_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.txt");
        let text = "scene_id room0\nintrinsics 100 100 32 24 64 48\ndepth_scale 1000\nstride 2\n\
                    masks masks.ovmk\nembeddings emb.ovem\ngt gt.tsv\n\
                    frame 0 depth=d/0.d16 pose=p/0.txt rgb=c/0.png\nframe 5 depth=d/5.d16 pose=p/5.txt\n";
        std::fs::write(&p, text).unwrap();
        let m = SceneManifest::parse(&p).unwrap();
        assert_eq!(m.stride, 2);
        assert_eq!(m.frames[1].id, 5);
        assert_eq!(m.to_text(), text);
    }

    #[test]
    fn manifest_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.txt");
        std::fs::write(&p, "scene_id a\nintrinsics 1 1 0 0 4\n").unwrap();
        assert!(matches!(SceneManifest::parse(&p), Err(IoError::Syntax { line: 2, .. })));
        std::fs::write(
            &p,
            "scene_id a\nintrinsics 1 1 0 0 4 4\nmasks m\nembeddings e\n\
             frame 3 depth=a pose=b\nframe 3 depth=a pose=b\n",
        )
        .unwrap();
        assert!(matches!(SceneManifest::parse(&p), Err(IoError::Invalid { .. })));
    }
}
