use ovmap_core::config::Config;
use ovmap_core::gateway::{MockGateway, RecordingGateway, ReplayGateway};
use ovmap_core::io::{load_scene, read_object_map, read_queries, write_object_map, Scene};
use ovmap_core::pipeline::{fuse, retrieve_eval, segment_eval};
use ovmap_core::retrieval::GatewaySet;
use ovmap_core::synth::{generate_queries, synth_scene, OracleGateway, SynthSceneSpec};

fn write_scene(spec: &SynthSceneSpec, dir: &std::path::Path) -> Scene {
    let queries: Vec<_> = generate_queries(spec).iter().map(|q| q.record(&spec.scene_id)).collect();
    let manifest = synth_scene(spec).unwrap().write(dir, &queries).unwrap();
    load_scene(&manifest).unwrap()
}

#[test]
fn object_map_round_trip_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(&SynthSceneSpec::random(21, 5, 6), dir.path());
    let cfg = Config::default();
    let (map, stats) = fuse(&scene, &cfg, None).unwrap();
    assert_eq!(stats.objects, map.objects.len());
    assert!(stats.lifted_points > stats.discarded_points);

    let path = dir.path().join("map.ovom");
    write_object_map(&path, &map).unwrap();
    let back = read_object_map(&path).unwrap();
    assert_eq!(back.config_hash, cfg.hash());
    assert_eq!(back.objects.len(), map.objects.len());
    for (a, b) in map.objects.iter().zip(&back.objects) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.points, b.points);
        assert_eq!(a.sources, b.sources);
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    let embedder = MockGateway::new(scene.dim, cfg.mock_embed_seed);
    let fresh = segment_eval(&map, &scene, &cfg, &embedder).unwrap();
    let loaded = segment_eval(&back, &scene, &cfg, &embedder).unwrap();
    assert_eq!(fresh.metrics.miou, loaded.metrics.miou);
    assert_eq!(loaded.metrics.miou, 1.0);
    assert_eq!(loaded.transfer.miou, 1.0);
}

#[test]
fn replayed_retrieval_matches_the_recording() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSceneSpec::retrieval(5);
    let scene = write_scene(&spec, dir.path());
    let queries = read_queries(&dir.path().join("queries.tsv")).unwrap();
    assert!(!queries.is_empty());
    let cfg = Config::default();
    let (map, _) = fuse(&scene, &cfg, None).unwrap();

    let log = dir.path().join("session.ovrp");
    let oracle = OracleGateway::from_scene(&scene, MockGateway::new(scene.dim, cfg.mock_embed_seed)).unwrap();
    let recording = RecordingGateway::create(oracle, &log).unwrap();
    let live = retrieve_eval(&map, &scene, &queries, GatewaySet::uniform(&recording), &cfg, None).unwrap();
    drop(recording);

    let replay = ReplayGateway::open(&log).unwrap();
    assert!(!replay.is_empty());
    let again = retrieve_eval(&map, &scene, &queries, GatewaySet::uniform(&replay), &cfg, None).unwrap();
    assert_eq!(live.records, again.records);
    assert_eq!(live.accuracy.at(0.25), Some(1.0));
}

#[test]
fn queries_for_other_scenes_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(&SynthSceneSpec::retrieval(1), dir.path());
    let mut queries = read_queries(&dir.path().join("queries.tsv")).unwrap();
    let n = queries.len();
    let mut foreign = queries[0].clone();
    foreign.scene_id = "elsewhere".into();
    queries.push(foreign);
    let cfg = Config::default();
    let (map, _) = fuse(&scene, &cfg, None).unwrap();
    let oracle = OracleGateway::from_scene(&scene, MockGateway::new(scene.dim, cfg.mock_embed_seed)).unwrap();
    let report = retrieve_eval(&map, &scene, &queries, GatewaySet::uniform(&oracle), &cfg, None).unwrap();
    assert_eq!(report.records.len(), n);
}
