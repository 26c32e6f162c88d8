//! Templated referring expressions with geometrically unambiguous answers.

use std::sync::LazyLock;

use regex::Regex;

use super::SynthSceneSpec;
use crate::geometry::{Box3, Vec3};
use crate::io::QueryRecord;

/// Minimum gap, in meters, between the answer and the runner-up.
pub const MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryKind {
    Near,
    Far,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthQuery {
    pub kind: QueryKind,
    pub text: String,
    pub main: String,
    pub reference: String,
    /// Index into the spec's objects.
    pub target: usize,
    pub gt_box: Box3,
    pub subsets: Vec<String>,
}

impl SynthQuery {
    pub fn record(&self, scene_id: &str) -> QueryRecord {
        QueryRecord {
            scene_id: scene_id.into(),
            text: self.text.clone(),
            gt_box: self.gt_box,
            subsets: self.subsets.clone(),
        }
    }
}

static RELATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:the )?(.+?) (?:that is |which is )?(closest to|nearest to|near|far from|farthest from) the (.+?)\.?$").unwrap()
});
static FACING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^facing the (.+?), (?:pick |find )?the (.+?) on the (left|right)\.?$").unwrap()
});

/// Recognizes the templates [`generate_queries`] emits plus close variants.
/// Returns the kind, main object name and reference name.
pub fn parse_template(text: &str) -> Option<(QueryKind, String, String)> {
    let t = text.trim().to_lowercase();
    if let Some(c) = FACING.captures(&t) {
        let kind = if &c[3] == "left" {
            QueryKind::Left
        } else {
            QueryKind::Right
        };
        return Some((kind, c[2].to_string(), c[1].to_string()));
    }
    let c = RELATION.captures(&t)?;
    let kind = match &c[2] {
        "far from" | "farthest from" => QueryKind::Far,
        _ => QueryKind::Near,
    };
    Some((kind, c[1].to_string(), c[3].to_string()))
}

/// Direction to the observer's left when facing an object whose front
/// points along `yaw`.
pub fn observer_left(yaw: f64) -> Vec3 {
    let f = -Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    Vec3::new(-f.y, f.x, 0.0)
}

/// Picks the index maximizing `score` when it beats the runner-up by at
/// least `margin`.
fn clear_winner(scores: &[(usize, f64)], margin: f64) -> Option<usize> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.1.total_cmp(&a.1));
    match s.as_slice() {
        [first, second, ..] if first.1 - second.1 >= margin => Some(first.0),
        _ => None,
    }
}

/// Every templated query the scene supports: near and far relations for
/// repeated classes against a unique reference, and left/right picks
/// relative to a unique reference with a known yaw.
pub fn generate_queries(spec: &SynthSceneSpec) -> Vec<SynthQuery> {
    let objs = &spec.objects;
    let count = |c: &str| objs.iter().filter(|o| o.class == c).count();
    let center = |i: usize| {
        let c = objs[i].shape.bounds().center();
        Vec3::new(c.x, c.y, 0.0)
    };
    let mut classes: Vec<&str> = objs.iter().map(|o| o.class.as_str()).collect();
    classes.sort();
    classes.dedup();

    let mut out = Vec::new();
    for &main in &classes {
        let members: Vec<usize> = (0..objs.len()).filter(|&i| objs[i].class == main).collect();
        if members.len() < 2 {
            continue;
        }
        let difficulty = if members.len() > 2 { "hard" } else { "easy" };
        for (ri, r) in objs.iter().enumerate() {
            if r.class == main || count(&r.class) != 1 {
                continue;
            }
            let dist: Vec<(usize, f64)> = members
                .iter()
                .map(|&i| (i, (center(i) - center(ri)).norm()))
                .collect();
            let neg: Vec<(usize, f64)> = dist.iter().map(|&(i, d)| (i, -d)).collect();
            let mut push = |kind: QueryKind, text: String, target: usize, tag: &str| {
                out.push(SynthQuery {
                    kind,
                    text,
                    main: main.into(),
                    reference: r.class.clone(),
                    target,
                    gt_box: objs[target].shape.bounds(),
                    subsets: vec![difficulty.into(), tag.into()],
                });
            };
            if let Some(t) = clear_winner(&neg, MARGIN) {
                push(QueryKind::Near, format!("the {main} that is closest to the {}", r.class), t, "view_indep");
            }
            if let Some(t) = clear_winner(&dist, MARGIN) {
                push(QueryKind::Far, format!("the {main} that is far from the {}", r.class), t, "view_indep");
            }
            if let Some(yaw) = r.yaw {
                let left = observer_left(yaw);
                let side: Vec<(usize, f64)> = members
                    .iter()
                    .map(|&i| (i, (center(i) - center(ri)).dot(&left)))
                    .collect();
                let right: Vec<(usize, f64)> = side.iter().map(|&(i, s)| (i, -s)).collect();
                if let Some(t) = clear_winner(&side, MARGIN) {
                    push(
                        QueryKind::Left,
                        format!("facing the {}, pick the {main} on the left", r.class),
                        t,
                        "view_dep",
                    );
                }
                if let Some(t) = clear_winner(&right, MARGIN) {
                    push(
                        QueryKind::Right,
                        format!("facing the {}, pick the {main} on the right", r.class),
                        t,
                        "view_dep",
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Primitive, Shape};

    fn obj(class: &str, x: f64, y: f64, yaw: Option<f64>) -> Primitive {
        Primitive {
            class: class.into(),
            shape: Shape::Box {
                center: [x, y, 0.2],
                half: [0.2, 0.2, 0.2],
            },
            yaw,
        }
    }

    #[test]
    fn templates_parse_back() {
        assert_eq!(
            parse_template("the table that is far from the armchair"),
            Some((QueryKind::Far, "table".into(), "armchair".into()))
        );
        assert_eq!(
            parse_template("Facing the kitchen cabinet, pick the trashcan on the left"),
            Some((QueryKind::Left, "trashcan".into(), "kitchen cabinet".into()))
        );
        assert_eq!(
            parse_template("the chair closest to the bed."),
            Some((QueryKind::Near, "chair".into(), "bed".into()))
        );
        assert_eq!(parse_template("a red chair"), None);
    }

    #[test]
    fn left_is_observer_relative() {
        // front faces +x; an observer facing it looks along -x, left is -y
        let l = observer_left(0.0);
        assert!((l - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn generated_answers() {
        let mut spec = SynthSceneSpec::random(0, 1, 2);
        spec.objects = vec![
            obj("cabinet", 0.0, 0.0, Some(0.0)),
            obj("trashcan", 0.3, -1.4, None),
            obj("trashcan", 0.3, 1.4, None),
            obj("table", -1.4, 0.0, None),
        ];
        let qs = generate_queries(&spec);
        let find = |k: QueryKind, r: &str| qs.iter().find(|q| q.kind == k && q.reference == r).map(|q| q.target);
        assert_eq!(find(QueryKind::Left, "cabinet"), Some(1));
        assert_eq!(find(QueryKind::Right, "cabinet"), Some(2));
        // symmetric about the cabinet: no clear nearest trashcan
        assert_eq!(find(QueryKind::Near, "cabinet"), None);
        for q in &qs {
            let (k, m, r) = parse_template(&q.text).unwrap();
            assert_eq!((k, m.as_str(), r.as_str()), (q.kind, q.main.as_str(), q.reference.as_str()));
        }
    }
}
