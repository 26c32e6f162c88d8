//! A gateway that answers from ground truth instead of a model.
//!
//! Query structuring understands the synthetic templates, verification and
//! orientation read per-pixel instance labels, and the final decision
//! applies the template's geometric relation to the listed centroids.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::LazyLock;

use regex::Regex;

use super::queries::{observer_left, parse_template, QueryKind};
use crate::gateway::{ChatRequest, GatewayError, ImageRef, LanguageGateway, MockGateway};
use crate::geometry::Vec3;
use crate::io::{GtObject, LabelMap, Scene};

static VERIFY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Is there an? (.+?) in this image region").unwrap());
static TILE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^tile (\d+): frame (\d+) bbox (\d+) (\d+) (\d+) (\d+) view_yaw (-?[\d.]+)").unwrap()
});
static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Which tile shows the (\w+) of the object").unwrap());
static QUERY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Query: (.+)$").unwrap());
static CANDIDATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^candidate (\d+): centroid \((-?[\d.]+), (-?[\d.]+), (-?[\d.]+)\)").unwrap()
});
static REFERENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^reference (.+?): centroid \((-?[\d.]+), (-?[\d.]+), (-?[\d.]+)\) yaw (\S+)").unwrap()
});

pub struct OracleGateway {
    embedder: MockGateway,
    gt: Vec<GtObject>,
    by_uri: HashMap<String, usize>,
    by_frame: HashMap<u32, usize>,
    labels: Vec<LabelMap>,
    calls: AtomicUsize,
}

impl OracleGateway {
    pub fn new(embedder: MockGateway, gt: Vec<GtObject>) -> Self {
        Self {
            embedder,
            gt,
            by_uri: HashMap::new(),
            by_frame: HashMap::new(),
            labels: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Registers a frame's instance labels under its id, its placeholder
    /// uri and, when given, its color image path.
    pub fn with_labels(mut self, frame_id: u32, rgb_uri: Option<String>, labels: LabelMap) -> Self {
        let slot = self.labels.len();
        self.labels.push(labels);
        self.by_frame.insert(frame_id, slot);
        self.by_uri.insert(ImageRef::frame_placeholder(frame_id), slot);
        if let Some(u) = rgb_uri {
            self.by_uri.insert(u, slot);
        }
        self
    }

    /// Oracle over a loaded scene; `None` without GT or label maps.
    pub fn from_scene(scene: &Scene, embedder: MockGateway) -> Option<Self> {
        if scene.gt.is_empty() || scene.labels.iter().all(Option::is_none) {
            return None;
        }
        let mut g = Self::new(embedder, scene.gt.clone());
        for (f, l) in scene.frames.iter().zip(&scene.labels) {
            if let Some(l) = l {
                let uri = f.rgb_path.as_ref().map(|p| p.to_string_lossy().into_owned());
                g = g.with_labels(f.id, uri, l.clone());
            }
        }
        Some(g)
    }

    pub fn chat_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Most frequent nonzero instance inside `[x0, x1) x [y0, y1)`.
    fn majority(&self, slot: usize, rect: [u32; 4]) -> Option<u32> {
        let l = &self.labels[slot];
        let mut counts: HashMap<u16, usize> = HashMap::new();
        for v in rect[1]..rect[3].min(l.height) {
            for u in rect[0]..rect[2].min(l.width) {
                let id = l.get(u, v);
                if id != 0 {
                    *counts.entry(id).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .max_by_key(|&(id, n)| (n, std::cmp::Reverse(id)))
            .map(|(id, _)| id as u32)
    }

    fn object(&self, id: u32) -> Option<&GtObject> {
        self.gt.iter().find(|o| o.id == id)
    }

    fn structure(&self, text: &str) -> String {
        let query = QUERY
            .captures(text)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();
        let json = match parse_template(&query) {
            Some((kind @ (QueryKind::Left | QueryKind::Right), main, reference)) => {
                let side = if kind == QueryKind::Left { "left" } else { "right" };
                serde_json::json!({
                    "main": {"name": main, "attributes": []},
                    "references": [reference],
                    "orientation": {"anchor": reference, "tokens": ["facing", side]},
                })
            }
            Some((_, main, reference)) => serde_json::json!({
                "main": {"name": main, "attributes": []},
                "references": [reference],
                "orientation": null,
            }),
            None => {
                let name = query.trim_start_matches("the ").trim_end_matches('.');
                serde_json::json!({
                    "main": {"name": name, "attributes": []},
                    "references": [],
                    "orientation": null,
                })
            }
        };
        json.to_string()
    }

    fn verify(&self, request: &ChatRequest, name: &str) -> String {
        let image = request.messages.iter().flat_map(|m| &m.images).next();
        let answer = image.and_then(|img| {
            let slot = *self.by_uri.get(&img.uri)?;
            let l = &self.labels[slot];
            let rect = img.bbox.unwrap_or([0, 0, l.width, l.height]);
            let id = self.majority(slot, rect)?;
            Some(self.object(id)?.class == name)
        });
        if answer == Some(true) { "yes" } else { "no" }.into()
    }

    fn orientation(&self, text: &str) -> String {
        let tiles: Vec<(u32, u32, [u32; 4], f64)> = TILE
            .captures_iter(text)
            .map(|c| {
                let n = |i: usize| c[i].parse::<u32>().unwrap_or(0);
                (n(1), n(2), [n(3), n(4), n(5), n(6)], c[7].parse().unwrap_or(0.0))
            })
            .collect();
        let Some(first) = tiles.first() else {
            return "0".into();
        };
        let token = TOKEN.captures(text).map_or("front".to_string(), |c| c[1].to_string());
        let yaw = self
            .by_frame
            .get(&first.1)
            .and_then(|&slot| self.majority(slot, first.2))
            .and_then(|id| self.object(id))
            .and_then(|o| o.yaw);
        let Some(yaw) = yaw else {
            return first.0.to_string();
        };
        let want = yaw
            + match token.as_str() {
                "back" => PI,
                "left" => FRAC_PI_2,
                "right" => -FRAC_PI_2,
                _ => 0.0,
            };
        let ang = |deg: f64| {
            let d = (deg.to_radians() - want).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        };
        tiles
            .iter()
            .min_by(|a, b| ang(a.3).total_cmp(&ang(b.3)))
            .map(|t| t.0.to_string())
            .unwrap()
    }

    fn decision(&self, text: &str) -> String {
        let num = |s: &str| s.parse::<f64>().unwrap_or(0.0);
        let cands: Vec<(usize, Vec3)> = CANDIDATE
            .captures_iter(text)
            .map(|c| (c[1].parse().unwrap_or(0), Vec3::new(num(&c[2]), num(&c[3]), num(&c[4]))))
            .collect();
        let refs: Vec<(String, Vec3, Option<f64>)> = REFERENCE
            .captures_iter(text)
            .map(|c| {
                let yaw = c[5].parse::<f64>().ok().map(f64::to_radians);
                (c[1].to_string(), Vec3::new(num(&c[2]), num(&c[3]), num(&c[4])), yaw)
            })
            .collect();
        let query = QUERY.captures(text).map(|c| c[1].to_string()).unwrap_or_default();
        let Some((kind, _, reference)) = parse_template(&query) else {
            return "0".into();
        };
        let Some((_, anchor, yaw)) = refs.iter().find(|r| r.0 == reference).or(refs.first()) else {
            return "0".into();
        };
        let flat = |v: &Vec3| Vec3::new(v.x, v.y, 0.0);
        let score = |c: &Vec3| -> f64 {
            let d = flat(c) - flat(anchor);
            match kind {
                QueryKind::Near => -d.norm(),
                QueryKind::Far => d.norm(),
                QueryKind::Left => d.dot(&observer_left(yaw.unwrap_or(0.0))),
                QueryKind::Right => -d.dot(&observer_left(yaw.unwrap_or(0.0))),
            }
        };
        cands
            .iter()
            .max_by(|a, b| score(&a.1).total_cmp(&score(&b.1)))
            .map_or("0".into(), |c| c.0.to_string())
    }
}

impl LanguageGateway for OracleGateway {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f32>, GatewayError> {
        self.embedder.embed_text(prompt)
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text = request.user_text();
        let system = request
            .messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        if system.contains("into JSON") {
            return Ok(self.structure(&text));
        }
        if let Some(c) = VERIFY.captures(&text) {
            return Ok(self.verify(request, &c[1]));
        }
        if TILE.is_match(&text) {
            return Ok(self.orientation(&text));
        }
        if CANDIDATE.is_match(&text) {
            return Ok(self.decision(&text));
        }
        Err(GatewayError::Malformed("oracle cannot answer this request".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use crate::geometry::Box3;
    use crate::retrieval::structure_query;

    fn gt() -> Vec<GtObject> {
        vec![
            GtObject {
                id: 1,
                class: "cabinet".into(),
                bbox: Box3::new(Vec3::zeros(), Vec3::repeat(1.0)),
                yaw: Some(FRAC_PI_2),
            },
            GtObject {
                id: 2,
                class: "lamp".into(),
                bbox: Box3::new(Vec3::zeros(), Vec3::repeat(1.0)),
                yaw: None,
            },
        ]
    }

    fn oracle() -> OracleGateway {
        let mut l = LabelMap::new(10, 10);
        for v in 0..10 {
            for u in 0..5 {
                l.data[(v * 10 + u) as usize] = 1;
            }
            for u in 6..10 {
                l.data[(v * 10 + u) as usize] = 2;
            }
        }
        OracleGateway::new(MockGateway::new(8, 0), gt()).with_labels(3, Some("rgb/3.png".into()), l)
    }

    #[test]
    fn structures_templates() {
        let g = oracle();
        let q = structure_query("facing the cabinet, pick the lamp on the right", &g).unwrap();
        assert_eq!(q.main.name, "lamp");
        assert_eq!(q.references, vec!["cabinet".to_string()]);
        assert_eq!(q.orientation.unwrap().anchor, "cabinet");
    }

    #[test]
    fn verifies_from_labels() {
        let g = oracle();
        let ask = |uri: &str, rect: [u32; 4], name: &str| {
            let img = ImageRef {
                uri: uri.into(),
                bbox: Some(rect),
            };
            let r = ChatRequest::new(vec![ChatMessage::user(format!(
                "Is there a {name} in this image region? Answer yes or no."
            ))
            .with_images(vec![img])]);
            g.chat(&r).unwrap()
        };
        assert_eq!(ask("rgb/3.png", [0, 0, 4, 10], "cabinet"), "yes");
        assert_eq!(ask("frame://3", [6, 0, 10, 10], "cabinet"), "no");
        assert_eq!(ask("frame://3", [6, 0, 10, 10], "lamp"), "yes");
        assert_eq!(ask("frame://9", [6, 0, 10, 10], "lamp"), "no");
    }

    #[test]
    fn picks_front_tile_and_decides() {
        let g = oracle();
        let text = "tile 0: frame 3 bbox 0 0 5 10 view_yaw 0.0\n\
                    tile 2: frame 3 bbox 0 0 5 10 view_yaw 88.0\n\
                    Which tile shows the front of the object?";
        assert_eq!(g.chat(&ChatRequest::new(vec![ChatMessage::user(text)])).unwrap(), "2");
        // cabinet faces +y, observer looks along -y, so left is +x
        let text = "Query: facing the cabinet, pick the lamp on the left\n\
                    candidate 0: centroid (-1.000, 0.000, 0.000) extent (1, 1, 1)\n\
                    candidate 1: centroid (1.000, 0.000, 0.000) extent (1, 1, 1)\n\
                    reference cabinet: centroid (0.000, 0.000, 0.000) yaw 90.0";
        assert_eq!(g.chat(&ChatRequest::new(vec![ChatMessage::user(text)])).unwrap(), "1");
    }
}
