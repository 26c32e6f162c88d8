use std::path::Path;
use std::process::{Command, Output};

fn ovmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovmap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ovmap(args);
    assert!(
        out.status.success(),
        "ovmap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(' '))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn synth_fuse_segment_eval() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    let map = dir.path().join("map.ovom");
    let report = dir.path().join("report");
    ok(&["--seed", "11", "synth", "--out", p(&scene_dir), "--objects", "4", "--frames", "5"]);
    let manifest = scene_dir.join("scene.txt");
    assert!(manifest.exists());
    let fused = ok(&["fuse", "--scene", p(&manifest), "--out", p(&map)]);
    assert!(fused.contains("objects 4"), "{fused}");
    ok(&["segment-eval", "--scene", p(&manifest), "--map", p(&map), "--out", p(&report)]);
    let kvs = std::fs::read_to_string(report.join("segment_metrics.kv")).unwrap();
    assert_eq!(kv(&kvs, "miou"), 1.0);
    assert_eq!(kv(&kvs, "objects"), 4.0);
    assert!(report.join("segment_metrics.txt").exists());

    let described = ok(&["inspect", p(&map)]);
    assert!(described.contains('4'), "{described}");
}

#[test]
fn retrieval_layout_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    let map = dir.path().join("map.ovom");
    let results = dir.path().join("results.tsv");
    ok(&["--seed", "2", "synth", "--out", p(&scene_dir), "--layout", "retrieval"]);
    let manifest = scene_dir.join("scene.txt");
    let queries = scene_dir.join("queries.tsv");
    ok(&["fuse", "--scene", p(&manifest), "--out", p(&map)]);
    ok(&[
        "retrieve-eval",
        "--scene",
        p(&manifest),
        "--map",
        p(&map),
        "--queries",
        p(&queries),
        "--out",
        p(&results),
        "--tiles",
        p(&dir.path().join("tiles")),
    ]);
    let summary = std::fs::read_to_string(dir.path().join("results.tsv.summary.txt")).unwrap();
    assert!(summary.contains("A@0.25 1.0000"), "{summary}");
    let rows = std::fs::read_to_string(&results).unwrap();
    assert!(rows.lines().filter(|l| !l.starts_with('#')).count() > 0);

    let one = ok(&[
        "retrieve",
        "--scene",
        p(&manifest),
        "--map",
        p(&map),
        "--query",
        "the trashcan that is closest to the cabinet",
    ]);
    assert!(!one.trim().is_empty());
}

#[test]
fn fusion_flags_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    ok(&["synth", "--out", p(&scene_dir), "--objects", "3", "--frames", "4"]);
    let manifest = scene_dir.join("scene.txt");
    let a = dir.path().join("a.ovom");
    let b = dir.path().join("b.ovom");
    ok(&["fuse", "--scene", p(&manifest), "--out", p(&a)]);
    ok(&["--delta", "0.3", "fuse", "--scene", p(&manifest), "--out", p(&b)]);
    let (ha, hb) = (ovmap_core::io::read_object_map(&a).unwrap(), ovmap_core::io::read_object_map(&b).unwrap());
    assert_ne!(ha.config_hash, hb.config_hash);
}

#[test]
fn missing_input_is_a_clean_error() {
    let out = ovmap(&["fuse", "--scene", "/nonexistent/scene.toml", "--out", "/tmp/x.ovom"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("/nonexistent/scene.toml"), "{err}");
}

#[test]
fn bad_weights_are_rejected() {
    let out = ovmap(&["--weights", "1,2,3", "fuse", "--scene", "x", "--out", "y"]);
    assert!(!out.status.success());
}
