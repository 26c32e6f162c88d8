use std::f64::consts::TAU;
use std::path::Path;

use image::{imageops, Rgb, RgbImage};

use super::{frame_image, frame_visibility, parse_index, Candidate, OrientationToken, RetrievalError};
use crate::gateway::{ChatMessage, ChatRequest, ImageRef, LanguageGateway, Role};
use crate::geometry::{Frame, Vec3};
use crate::mask::PixelRect;

pub const ORIENTATION_PROMPT: &str = include_str!("../../prompts/ground_orientation.v1.txt");

const TILE_PX: u32 = 160;
const GRID_ROWS: usize = 2;

/// Direction from `centroid` to the camera center about +z, in `[0, 2π)`.
pub fn camera_yaw(frame: &Frame, centroid: &Vec3) -> f64 {
    let d = frame.pose.center() - centroid;
    d.y.atan2(d.x).rem_euclid(TAU)
}

pub fn bin_center(bin: usize, n_bins: usize) -> f64 {
    bin as f64 * TAU / n_bins as f64
}

/// Index of the bin whose center is nearest `yaw`.
pub fn bin_of(yaw: f64, n_bins: usize) -> usize {
    let step = TAU / n_bins as f64;
    ((yaw.rem_euclid(TAU) / step).round() as usize) % n_bins
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// The view representing one yaw bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationView {
    pub bin: usize,
    pub frame_id: u32,
    pub bbox: PixelRect,
    pub camera_yaw: f64,
}

/// For each bin, the frame (showing the candidate) whose camera yaw is
/// closest to the bin center. Returned in bin order.
pub fn orientation_views(
    cand: &Candidate,
    frames: &[Frame],
    n_bins: usize,
    depth_tol: f64,
) -> Vec<OrientationView> {
    let centroid = cand.object.centroid();
    let mut best: Vec<Option<(f64, OrientationView)>> = vec![None; n_bins];
    for frame in frames {
        let vis = frame_visibility(&cand.object.points, frame, &[], depth_tol);
        let Some(bbox) = vis.bbox else {
            continue;
        };
        let yaw = camera_yaw(frame, &centroid);
        let bin = bin_of(yaw, n_bins);
        let dist = angular_distance(yaw, bin_center(bin, n_bins));
        if best[bin].is_none_or(|(d, _)| dist < d) {
            best[bin] = Some((
                dist,
                OrientationView {
                    bin,
                    frame_id: frame.id,
                    bbox,
                    camera_yaw: yaw,
                },
            ));
        }
    }
    best.into_iter().flatten().map(|(_, v)| v).collect()
}

// 3x5 digit glyphs, one row per entry, high bit on the left.
const GLYPHS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn draw_label(img: &mut RgbImage, x: u32, y: u32, n: usize) {
    let scale = 4;
    let digits: Vec<usize> = n.to_string().bytes().map(|b| (b - b'0') as usize).collect();
    let w = (digits.len() as u32 * 4 + 1) * scale;
    let h = 7 * scale;
    for py in y..(y + h).min(img.height()) {
        for px in x..(x + w).min(img.width()) {
            img.put_pixel(px, py, Rgb([255, 255, 255]));
        }
    }
    for (i, &d) in digits.iter().enumerate() {
        for (row, bits) in GLYPHS[d].iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                let gx = x + (1 + i as u32 * 4 + col) * scale;
                let gy = y + (1 + row as u32) * scale;
                for py in gy..(gy + scale).min(img.height()) {
                    for px in gx..(gx + scale).min(img.width()) {
                        img.put_pixel(px, py, Rgb([0, 0, 0]));
                    }
                }
            }
        }
    }
}

/// Tiles the views into a two-row grid, one slot per bin, each labeled with
/// its bin index. Empty bins stay black. Every view's frame needs a color
/// image.
pub fn compose_grid(
    views: &[OrientationView],
    frames: &[Frame],
    n_bins: usize,
) -> Result<RgbImage, RetrievalError> {
    let cols = n_bins.div_ceil(GRID_ROWS);
    let mut grid = RgbImage::new(cols as u32 * TILE_PX, GRID_ROWS as u32 * TILE_PX);
    for v in views {
        let frame = frames
            .iter()
            .find(|f| f.id == v.frame_id)
            .ok_or(RetrievalError::MissingFrame(v.frame_id))?;
        let path = frame
            .rgb_path
            .as_ref()
            .ok_or(RetrievalError::MissingColor(frame.id))?;
        let rgb = image::open(path)?.to_rgb8();
        let x1 = v.bbox.x1.min(rgb.width());
        let y1 = v.bbox.y1.min(rgb.height());
        let crop = imageops::crop_imm(
            &rgb,
            v.bbox.x0,
            v.bbox.y0,
            x1.saturating_sub(v.bbox.x0).max(1),
            y1.saturating_sub(v.bbox.y0).max(1),
        )
        .to_image();
        let tile = imageops::resize(&crop, TILE_PX, TILE_PX, imageops::FilterType::Triangle);
        let (r, c) = (v.bin / cols, v.bin % cols);
        let (x, y) = (c as u32 * TILE_PX, r as u32 * TILE_PX);
        imageops::replace(&mut grid, &tile, x as i64, y as i64);
        draw_label(&mut grid, x + 2, y + 2, v.bin);
    }
    Ok(grid)
}

pub fn orientation_request(
    views: &[OrientationView],
    token: OrientationToken,
    images: Vec<ImageRef>,
) -> ChatRequest {
    let tiles = views
        .iter()
        .map(|v| {
            format!(
                "tile {}: frame {} bbox {} {} {} {} view_yaw {:.1}",
                v.bin,
                v.frame_id,
                v.bbox.x0,
                v.bbox.y0,
                v.bbox.x1,
                v.bbox.y1,
                v.camera_yaw.to_degrees()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let text = ORIENTATION_PROMPT
        .trim_end()
        .replace("{tiles}", &tiles)
        .replace("{token}", token.as_str());
    ChatRequest::new(vec![ChatMessage::user(text).with_images(images)])
}

/// Estimates which way the candidate faces by asking the gateway to pick
/// the tile matching `token`. Returns the chosen bin's center yaw.
///
/// With `tile_dir` set and color images for every view, one grid image is
/// written there and attached; otherwise each view is attached separately.
pub fn ground_orientation(
    cand: &Candidate,
    frames: &[Frame],
    token: OrientationToken,
    vlm: &dyn LanguageGateway,
    n_bins: usize,
    depth_tol: f64,
    tile_dir: Option<&Path>,
) -> Result<f64, RetrievalError> {
    if n_bins < 4 {
        return Err(RetrievalError::InvalidParams(format!(
            "need at least 4 orientation bins, got {n_bins}"
        )));
    }
    let views = orientation_views(cand, frames, n_bins, depth_tol);
    if views.len() < 2 {
        return Err(RetrievalError::InsufficientViews { bins: views.len() });
    }
    let has_rgb = views.iter().all(|v| {
        frames
            .iter()
            .any(|f| f.id == v.frame_id && f.rgb_path.is_some())
    });
    let images = match tile_dir {
        Some(dir) if has_rgb => {
            let grid = compose_grid(&views, frames, n_bins)?;
            let path = dir.join(format!(
                "orient_obj{}_{}.png",
                cand.object.id,
                token.as_str()
            ));
            let fail = |msg: String| RetrievalError::TileWrite {
                path: path.clone(),
                msg,
            };
            std::fs::create_dir_all(dir).map_err(|e| fail(e.to_string()))?;
            grid.save(&path).map_err(|e| fail(e.to_string()))?;
            vec![ImageRef::new(path.to_string_lossy())]
        }
        _ => views
            .iter()
            .map(|v| {
                let f = frames.iter().find(|f| f.id == v.frame_id).expect("view frame");
                frame_image(f, Some(v.bbox))
            })
            .collect(),
    };

    let mut request = orientation_request(&views, token, images);
    let valid = |reply: &str| -> Result<usize, String> {
        let idx = parse_index(reply).ok_or("no integer in reply")?;
        if views.iter().any(|v| v.bin == idx) {
            Ok(idx)
        } else {
            Err(format!("tile {idx} does not exist"))
        }
    };
    let first = vlm.chat(&request)?;
    let bin = match valid(&first) {
        Ok(b) => b,
        Err(reason) => {
            request.messages.push(ChatMessage {
                role: Role::Assistant,
                text: first,
                images: Vec::new(),
            });
            request.messages.push(ChatMessage::user(format!(
                "That reply was invalid: {reason}. Reply with one of the tile numbers only."
            )));
            let second = vlm.chat(&request)?;
            valid(&second).map_err(|reason| RetrievalError::BadReply {
                reply: second,
                reason,
            })?
        }
    };
    Ok(bin_center(bin, n_bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Object3D, SourceMask};
    use crate::gateway::MockGateway;
    use crate::geometry::{DepthMap, Intrinsics, Pose};
    use std::f64::consts::PI;

    #[test]
    fn bins_are_a_bijection() {
        for n in [4, 8, 12] {
            for k in 0..n {
                assert_eq!(bin_of(bin_center(k, n), n), k);
            }
        }
        assert_eq!(bin_of(TAU - 0.01, 8), 0);
        assert!((bin_center(2, 8) - PI / 2.0).abs() < 1e-15);
    }

    /// A small sphere of points at the origin seen from cameras at the given
    /// yaws, rendered with exact depth.
    fn ring(yaws: &[f64]) -> (Candidate, Vec<Frame>) {
        let r = 0.2;
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..20 {
                let th = i as f64 / 40.0 * TAU;
                let ph = j as f64 / 20.0 * PI;
                pts.push(Vec3::new(r * ph.sin() * th.cos(), r * ph.sin() * th.sin(), r * ph.cos()));
            }
        }
        let src = SourceMask {
            frame_id: 0,
            mask_index: 0,
            fragment: 0,
        };
        let obj = Object3D::new(7, pts, vec![1.0], src, 0.05).unwrap();
        let k = Intrinsics::new(60.0, 60.0, 32.0, 32.0, 64, 64).unwrap();
        let frames = yaws
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let eye = Vec3::new(2.0 * y.cos(), 2.0 * y.sin(), 0.0);
                let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::z()).unwrap();
                let mut depth = DepthMap::filled(64, 64, 0.0);
                for v in 0..64u32 {
                    for u in 0..64u32 {
                        let dir = Vec3::new((u as f64 - 32.0) / 60.0, (v as f64 - 32.0) / 60.0, 1.0);
                        let d = pose.rotation * dir;
                        // ray-sphere: |eye + t d|^2 = r^2
                        let a = d.dot(&d);
                        let b = 2.0 * eye.dot(&d);
                        let c = eye.dot(&eye) - r * r;
                        let disc = b * b - 4.0 * a * c;
                        if disc >= 0.0 {
                            let t = (-b - disc.sqrt()) / (2.0 * a);
                            depth.data[(v * 64 + u) as usize] = t as f32;
                        }
                    }
                }
                Frame::new(i as u32, depth, k, pose).unwrap()
            })
            .collect();
        (Candidate::new(obj, 1.0), frames)
    }

    #[test]
    fn picks_bin_from_reply() {
        let (c, frames) = ring(&[0.0, PI / 2.0, PI, 1.5 * PI]);
        let views = orientation_views(&c, &frames, 8, 0.1);
        assert_eq!(views.iter().map(|v| v.bin).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
        let g = MockGateway::new(1, 0).with_default_reply("2");
        let yaw = ground_orientation(&c, &frames, OrientationToken::Front, &g, 8, 0.1, None).unwrap();
        assert!((yaw - PI / 2.0).abs() < 1e-12);
        let g = MockGateway::new(1, 0).with_default_reply("Tile 0.");
        let yaw = ground_orientation(&c, &frames, OrientationToken::Front, &g, 8, 0.1, None).unwrap();
        assert_eq!(yaw, 0.0);
    }

    #[test]
    fn invalid_tile_is_retried_then_rejected() {
        let (c, frames) = ring(&[0.0, PI]);
        let g = MockGateway::new(1, 0).with_default_reply("3");
        let err = ground_orientation(&c, &frames, OrientationToken::Front, &g, 8, 0.1, None);
        assert!(matches!(err, Err(RetrievalError::BadReply { .. })));
        assert_eq!(g.chat_calls(), 2);
    }

    #[test]
    fn one_bin_is_insufficient() {
        let (c, frames) = ring(&[0.0, 0.05]);
        let g = MockGateway::new(1, 0).with_default_reply("0");
        assert!(matches!(
            ground_orientation(&c, &frames, OrientationToken::Front, &g, 8, 0.1, None),
            Err(RetrievalError::InsufficientViews { bins: 1 })
        ));
    }

    #[test]
    fn grid_has_labeled_tiles() {
        let (c, frames) = ring(&[0.0, PI]);
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = frames
            .into_iter()
            .map(|f| {
                let p = dir.path().join(format!("{}.png", f.id));
                RgbImage::from_pixel(64, 64, Rgb([200, 0, 0])).save(&p).unwrap();
                f.with_rgb(p)
            })
            .collect();
        let views = orientation_views(&c, &frames, 8, 0.1);
        let grid = compose_grid(&views, &frames, 8).unwrap();
        assert_eq!(grid.dimensions(), (4 * TILE_PX, 2 * TILE_PX));
        // label background of tile 0, red body of tile 0, empty tile 1
        assert_eq!(grid.get_pixel(2, 2), &Rgb([255, 255, 255]));
        assert_eq!(grid.get_pixel(100, 100), &Rgb([200, 0, 0]));
        assert_eq!(grid.get_pixel(TILE_PX + 50, 50), &Rgb([0, 0, 0]));
        let g = MockGateway::new(1, 0).with_default_reply("4");
        let yaw = ground_orientation(
            &c,
            &frames,
            OrientationToken::Front,
            &g,
            8,
            0.1,
            Some(dir.path()),
        )
        .unwrap();
        assert!((yaw - PI).abs() < 1e-12);
        assert!(dir.path().join("orient_obj7_front.png").exists());
    }
}
