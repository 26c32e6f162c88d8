//! Tab-separated text tables. Blank lines and lines starting with `#` are
//! skipped.

use std::path::Path;

use super::{read_text, write_file, IoError};
use crate::geometry::{Box3, Vec3};

fn fmt_box(b: &Box3) -> String {
    format!(
        "{} {} {} {} {} {}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    )
}

fn parse_box(path: &Path, line: usize, field: &str) -> Result<Box3, IoError> {
    let v: Vec<f64> = field
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| IoError::syntax(path, line, format!("bad box {field:?}")))?;
    if v.len() != 6 {
        return Err(IoError::syntax(path, line, "box needs 6 numbers"));
    }
    let b = Box3::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
    if (0..3).any(|i| !(b.min[i] <= b.max[i])) {
        return Err(IoError::syntax(path, line, "box min exceeds max"));
    }
    Ok(b)
}

fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim_end_matches('\r');
        if t.trim().is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t.split('\t').collect()))
        }
    })
}

/// One annotated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u32,
    pub class: String,
    pub bbox: Box3,
    /// Direction the instance's front faces about +z, radians.
    pub yaw: Option<f64>,
}

/// Columns: id, class, box as six numbers, yaw or `-`.
pub fn read_gt_table(path: &Path) -> Result<Vec<GtObject>, IoError> {
    let text = read_text(path)?;
    let mut out: Vec<GtObject> = Vec::new();
    for (line, f) in rows(&text) {
        if f.len() != 4 {
            return Err(IoError::syntax(path, line, "expected 4 tab-separated fields"));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| IoError::syntax(path, line, format!("bad id {:?}", f[0])))?;
        if id == 0 || out.iter().any(|o| o.id == id) {
            return Err(IoError::syntax(path, line, format!("id {id} is zero or repeated")));
        }
        let yaw = match f[3].trim() {
            "-" => None,
            s => Some(
                s.parse()
                    .map_err(|_| IoError::syntax(path, line, format!("bad yaw {s:?}")))?,
            ),
        };
        out.push(GtObject {
            id,
            class: f[1].trim().to_string(),
            bbox: parse_box(path, line, f[2])?,
            yaw,
        });
    }
    Ok(out)
}

pub fn write_gt_table(path: &Path, objects: &[GtObject]) -> Result<(), IoError> {
    let mut s = String::from("# id\tclass\tmin_x min_y min_z max_x max_y max_z\tyaw\n");
    for o in objects {
        let yaw = o.yaw.map_or("-".to_string(), |y| y.to_string());
        s.push_str(&format!("{}\t{}\t{}\t{}\n", o.id, o.class, fmt_box(&o.bbox), yaw));
    }
    write_file(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub scene_id: String,
    pub text: String,
    pub gt_box: Box3,
    pub subsets: Vec<String>,
}

/// Columns: scene id, query text, GT box, comma-separated subset tags.
pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>, IoError> {
    let text = read_text(path)?;
    rows(&text)
        .map(|(line, f)| {
            if f.len() != 3 && f.len() != 4 {
                return Err(IoError::syntax(path, line, "expected 3 or 4 tab-separated fields"));
            }
            if f[1].trim().is_empty() {
                return Err(IoError::syntax(path, line, "empty query text"));
            }
            let subsets = f
                .get(3)
                .map(|s| {
                    s.split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default();
            Ok(QueryRecord {
                scene_id: f[0].trim().to_string(),
                text: f[1].trim().to_string(),
                gt_box: parse_box(path, line, f[2])?,
                subsets,
            })
        })
        .collect()
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<(), IoError> {
    let mut s = String::from("# scene\tquery\tgt box\tsubsets\n");
    for q in queries {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            q.scene_id,
            q.text,
            fmt_box(&q.gt_box),
            q.subsets.join(",")
        ));
    }
    write_file(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub index: usize,
    pub scene_id: String,
    pub text: String,
    /// `ok` or the error that stopped the query.
    pub status: String,
    pub object_id: Option<u32>,
    pub predicted_box: Option<Box3>,
    pub iou: f64,
    pub correct_at: Vec<(f64, bool)>,
}

pub fn write_results(path: &Path, results: &[ResultRecord], thresholds: &[f64]) -> Result<(), IoError> {
    let mut s = String::from("# index\tscene\tquery\tstatus\tobject\tpredicted box\tiou");
    for t in thresholds {
        s.push_str(&format!("\tA@{t}"));
    }
    s.push('\n');
    for r in results {
        let obj = r.object_id.map_or("-".into(), |i| i.to_string());
        let b = r.predicted_box.as_ref().map_or("-".into(), fmt_box);
        let status = r.status.replace(['\t', '\n'], " ");
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
            r.index, r.scene_id, r.text, status, obj, b, r.iou
        ));
        for t in thresholds {
            let pass = r.correct_at.iter().any(|(rt, ok)| rt == t && *ok);
            s.push_str(if pass { "\tpass" } else { "\tfail" });
        }
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gt_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.tsv");
        let objs = vec![
            GtObject {
                id: 1,
                class: "kitchen cabinet".into(),
                bbox: Box3::new(Vec3::new(0.0, 0.1, 0.0), Vec3::new(1.0, 1.5, 0.9)),
                yaw: Some(1.25),
            },
            GtObject {
                id: 2,
                class: "lamp".into(),
                bbox: Box3::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(-0.5, -0.5, 1.0)),
                yaw: None,
            },
        ];
        write_gt_table(&p, &objs).unwrap();
        assert_eq!(read_gt_table(&p).unwrap(), objs);
        std::fs::write(&p, "1\tlamp\t0 0 0 1 1\t-\n").unwrap();
        assert!(matches!(read_gt_table(&p), Err(IoError::Syntax { line: 1, .. })));
    }

    #[test]
    fn queries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.tsv");
        let qs = vec![QueryRecord {
            scene_id: "room0".into(),
            text: "the table that is far from the armchair".into(),
            gt_box: Box3::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)),
            subsets: vec!["hard".into(), "view_indep".into()],
        }];
        write_queries(&p, &qs).unwrap();
        assert_eq!(read_queries(&p).unwrap(), qs);
    }
}
