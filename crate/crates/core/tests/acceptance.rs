//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ovmap_core::config::Config;
use ovmap_core::context_embedding::{aggregate_embedding, EmbeddingError, EmbeddingWeights};
use ovmap_core::fusion::{
    fuse_scene, merge_criterion, split_3d_indices, try_merge, FusionParams, Object3D,
    Observation, SourceMask,
};
use ovmap_core::gateway::MockGateway;
use ovmap_core::geometry::{
    back_project, back_project_depth, project, voxel_iov, Box3, DepthMap, Frame, Intrinsics,
    Pose, Vec3, VoxelSet,
};
use ovmap_core::io::{load_scene, write_object_map, Scene};
use ovmap_core::labeling::compute_metrics;
use ovmap_core::mask::Mask2D;
use ovmap_core::mask_refinement::{progressive_select_refs, split_fragments_2d};
use ovmap_core::pipeline::{fuse, retrieve_eval, segment_eval};
use ovmap_core::retrieval::{grounding_accuracy, GatewaySet, GroundingResult};
use ovmap_core::synth::{
    generate_queries, synth_scene, CameraSpec, OracleGateway, Primitive, QueryKind,
    Shape, SynthSceneSpec,
};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(limit: Duration, took: Duration) -> Result<(), String> {
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

// geometry round trips and voxel IoV
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_px, mut worst_m) = (0f64, 0f64);
    for _ in 0..1000 {
        let (w, h) = (160, 120);
        let k = Intrinsics {
            fx: rng.random_range(80.0..400.0),
            fy: rng.random_range(80.0..400.0),
            cx: rng.random_range(60.0..100.0),
            cy: rng.random_range(40.0..80.0),
            width: w,
            height: h,
        };
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.1..3.1),
        );
        let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..3.0));
        let pose = Pose::new(*rot.matrix(), t).map_err(|e| e.to_string())?;
        let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
        let d: f32 = rng.random_range(0.2..10.0);
        let mut depth = DepthMap::filled(w, h, 0.0);
        depth.data[(v * w + u) as usize] = d;
        let frame = Frame::new(0, depth, k, pose).map_err(|e| e.to_string())?;
        let p = back_project(u as i64, v as i64, &frame).map_err(|e| e.to_string())?;
        let (uv, z) = project(&p, &frame).map_err(|e| e.to_string())?;
        worst_px = worst_px.max((uv[0] - u as f64).hypot(uv[1] - v as f64));
        let again = back_project_depth(uv[0], uv[1], z, &k, &pose);
        worst_m = worst_m.max((again - p).norm()).max((z - d as f64).abs());
    }
    check(worst_px <= 0.5, || format!("pixel error {worst_px}"))?;
    check(worst_m <= 1e-4, || format!("metric error {worst_m}"))?;

    for _ in 0..200 {
        let keys = |rng: &mut ChaCha8Rng| -> Vec<[i32; 3]> {
            let n = rng.random_range(1..60);
            (0..n)
                .map(|_| [rng.random_range(-4..4), rng.random_range(-4..4), rng.random_range(-2..2)])
                .collect()
        };
        let (ka, kb) = (keys(&mut rng), keys(&mut rng));
        let a = VoxelSet::from_keys(0.05, ka.clone()).unwrap();
        let b = VoxelSet::from_keys(0.05, kb.clone()).unwrap();
        let (sa, sb): (HashSet<_>, HashSet<_>) = (ka.into_iter().collect(), kb.into_iter().collect());
        let inter = sa.intersection(&sb).count() as f64;
        let want = (inter / sa.len() as f64, inter / sb.len() as f64);
        let got = voxel_iov(&a, &b).map_err(|e| e.to_string())?;
        check(got == want, || format!("voxel_iov {got:?} vs brute force {want:?}"))?;
    }
    let took = start.elapsed();
    within(Duration::from_secs(5), took)?;
    Ok(format!("1000 round trips, max {worst_px:.2e} px / {worst_m:.2e} m; 200 IoV pairs exact; {took:.2?}"))
}

fn definition(a: f64, b: f64, gamma: f64, delta: f64) -> bool {
    a > gamma && b > gamma && (a - b).abs() < delta
}

fn line_object(start: i32, len: i32) -> Object3D {
    let pts = (start..start + len)
        .map(|x| Vec3::new(x as f64 + 0.5, 0.5, 0.5))
        .collect();
    let src = SourceMask {
        frame_id: 0,
        mask_index: 0,
        fragment: 0,
    };
    Object3D::new(0, pts, vec![1.0, 0.0], src, 1.0).unwrap()
}

// merge rule truth table
fn criterion_2() -> Outcome {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let params: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for &g in &params {
        for &d in &params {
            for &a in &grid {
                for &b in &grid {
                    cases += 1;
                    if merge_criterion(a, b, g, d) != definition(a, b, g, d) {
                        mismatches.push(format!("criterion({a},{b},{g},{d})"));
                    }
                }
            }
            // realizable pairs through real voxel sets: |A| = 20j, |B| = 20i, |A∩B| = ij
            for i in 0..=20i32 {
                for j in 0..=20i32 {
                    if (i == 0) != (j == 0) {
                        continue;
                    }
                    let (na, nb, inter) = if i == 0 { (20, 20, 0) } else { (20 * j, 20 * i, i * j) };
                    let oa = line_object(0, na);
                    let ob = line_object(na - inter, nb);
                    let fp = FusionParams {
                        gamma: g,
                        delta: d,
                        voxel_size: 1.0,
                        ..FusionParams::default()
                    };
                    let got = try_merge(&oa, &ob, &fp).map_err(|e| e.to_string())?;
                    let (ia, ib) = (inter as f64 / na as f64, inter as f64 / nb as f64);
                    cases += 1;
                    if got != definition(ia, ib, g, d) {
                        mismatches.push(format!("try_merge({ia},{ib},{g},{d})"));
                    }
                }
            }
        }
    }
    check(mismatches.is_empty(), || format!("{} mismatches, e.g. {}", mismatches.len(), mismatches[0]))?;
    Ok(format!("{cases} cases, zero mismatches"))
}

/// Quadratic DBSCAN: closed eps-balls including the point, index-order scan,
/// border points kept by the first cluster that reaches them.
fn reference_dbscan<const D: usize>(pts: &[[f64; D]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    let n = pts.len();
    let near = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (0..D).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum::<f64>() <= eps * eps)
            .collect()
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut c = 0;
    for i in 0..n {
        if label[i].is_some() {
            continue;
        }
        let nb = near(i);
        if nb.len() < min_pts {
            continue;
        }
        label[i] = Some(c);
        let mut queue = nb;
        while let Some(j) = queue.pop() {
            if label[j].is_some() {
                continue;
            }
            label[j] = Some(c);
            let nj = near(j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
        c += 1;
    }
    partition(&label)
}

fn partition(label: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in label.iter().enumerate() {
        if let Some(c) = l {
            groups.entry(*c).or_default().push(i);
        }
    }
    canonical(groups.into_values().collect())
}

fn canonical(mut p: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for g in &mut p {
        g.sort_unstable();
    }
    p.sort();
    p
}

// DBSCAN against the quadratic reference
fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut clusters_seen = 0;
    for inst in 0..60 {
        let centers = rng.random_range(1..5);
        if inst % 2 == 0 {
            let (w, h) = (64u32, 64u32);
            let mut pix = HashSet::new();
            let target = rng.random_range(20..500);
            let sigma = rng.random_range(2.0..6.0);
            let cs: Vec<(f64, f64)> = (0..centers)
                .map(|_| (rng.random_range(8.0..56.0), rng.random_range(8.0..56.0)))
                .collect();
            let noise = Normal::new(0.0, sigma).unwrap();
            while pix.len() < target {
                let (u, v) = if rng.random_bool(0.1) {
                    (rng.random_range(0..w as i64), rng.random_range(0..h as i64))
                } else {
                    let c = cs[rng.random_range(0..cs.len())];
                    ((c.0 + noise.sample(&mut rng)).round() as i64, (c.1 + noise.sample(&mut rng)).round() as i64)
                };
                if (0..w as i64).contains(&u) && (0..h as i64).contains(&v) {
                    pix.insert((u as u32, v as u32));
                }
            }
            let mask = Mask2D::from_pixels(0, w, h, 0, pix).unwrap();
            let eps = [1.0, 1.5, 2.0, 2.5, 3.0][rng.random_range(0..5)];
            let min_pts = rng.random_range(2..9);
            let order: Vec<(u32, u32)> = mask.pixels().collect();
            let raw: Vec<[f64; 2]> = order.iter().map(|&(u, v)| [u as f64, v as f64]).collect();
            let want = reference_dbscan(&raw, eps, min_pts);
            let got = match split_fragments_2d(&mask, eps, min_pts) {
                Ok(frags) => canonical(
                    frags
                        .iter()
                        .map(|f| {
                            f.pixels()
                                .map(|p| order.binary_search_by_key(&(p.1, p.0), |q| (q.1, q.0)).unwrap())
                                .collect()
                        })
                        .collect(),
                ),
                Err(_) => Vec::new(),
            };
            check(got == want, || format!("2D instance {inst}: {} vs {} clusters", got.len(), want.len()))?;
            clusters_seen += want.len();
        } else {
            let n = rng.random_range(20..=500);
            let sigma = rng.random_range(0.03..0.2);
            let noise = Normal::new(0.0, sigma).unwrap();
            let cs: Vec<Vec3> = (0..centers)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
                    } else {
                        cs[rng.random_range(0..cs.len())]
                            + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                    }
                })
                .collect();
            let params = FusionParams {
                dbscan_eps_m: rng.random_range(0.05..0.25),
                dbscan_min_pts: rng.random_range(2..12),
                ..FusionParams::default()
            };
            let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
            let want = reference_dbscan(&raw, params.dbscan_eps_m, params.dbscan_min_pts);
            let got = split_3d_indices(&pts, &params).map(canonical).unwrap_or_default();
            check(got == want, || format!("3D instance {inst}: {} vs {} clusters", got.len(), want.len()))?;
            clusters_seen += want.len();
        }
    }
    let took = start.elapsed();
    within(Duration::from_secs(30), took)?;
    Ok(format!("60 instances identical ({clusters_seen} clusters); {took:.2?}"))
}

fn random_blob(rng: &mut ChaCha8Rng, level: u16) -> Mask2D {
    let mut pix = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let (x0, y0) = (rng.random_range(0..56u32), rng.random_range(0..56u32));
        let (w, h) = (rng.random_range(2..24u32), rng.random_range(2..24u32));
        for v in y0..(y0 + h).min(64) {
            for u in x0..(x0 + w).min(64) {
                pix.push((u, v));
            }
        }
    }
    Mask2D::from_pixels(0, 64, 64, level, pix).unwrap()
}

// progressive selection invariant
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tau = [1.0, 0.5, 0.3];
    let mut kept_total = 0;
    for stack in 0..100 {
        let levels: Vec<Vec<Mask2D>> = (0..3)
            .map(|l| (0..rng.random_range(1..9)).map(|_| random_blob(&mut rng, l)).collect())
            .collect();
        let views: Vec<Vec<&Mask2D>> = levels.iter().map(|l| l.iter().collect()).collect();
        let kept = progressive_select_refs(&views, &tau).map_err(|e| e.to_string())?;
        let pixels = |m: &Mask2D| -> HashSet<(u32, u32)> { m.pixels().collect() };
        for (n, r) in kept.iter().enumerate() {
            let m = pixels(&levels[r.level][r.index]);
            for prev in &kept[..n] {
                let p = pixels(&levels[prev.level][prev.index]);
                let ratio = m.intersection(&p).count() as f64 / m.len() as f64;
                check(ratio < tau[r.level], || {
                    format!("stack {stack}: level {} mask overlaps a kept mask by {ratio}", r.level)
                })?;
            }
        }
        kept_total += kept.len();
    }
    Ok(format!("100 stacks, {kept_total} kept masks, invariant holds"))
}

// embedding aggregation
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    let mut worst_scale = 0f64;
    for _ in 0..100 {
        let dim = rng.random_range(4..96);
        let crops: [Vec<f32>; 5] = std::array::from_fn(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect());
        let w = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..0.5),
        ];
        let weights = EmbeddingWeights::from_array(w).map_err(|e| e.to_string())?;
        let got = aggregate_embedding(&crops, &weights).map_err(|e| e.to_string())?;
        let mut v = vec![0f64; dim];
        for (d, x) in v.iter_mut().enumerate() {
            *x = w[0] * crops[0][d] as f64 + w[1] * crops[1][d] as f64 + w[2] * crops[2][d] as f64
                + w[3] * crops[3][d] as f64
                - w[4] * crops[4][d] as f64;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (g, x) in got.iter().zip(&v) {
            worst = worst.max((*g as f64 - x / norm).abs());
        }
        let s = rng.random_range(0.01..100.0);
        let scaled = aggregate_embedding(&crops, &weights.scaled(s)).map_err(|e| e.to_string())?;
        for (a, b) in got.iter().zip(&scaled) {
            worst_scale = worst_scale.max((a - b).abs() as f64);
        }
    }
    check(worst <= 1e-6, || format!("oracle deviation {worst}"))?;
    check(worst_scale <= 1e-6, || format!("rescaling deviation {worst_scale}"))?;
    let same: Vec<f32> = vec![0.3, -0.7, 0.1];
    let crops: [Vec<f32>; 5] = std::array::from_fn(|_| same.clone());
    let cancel = EmbeddingWeights::from_array([0.25, 0.25, 0.25, 0.25, 1.0]).unwrap();
    let r = aggregate_embedding(&crops, &cancel);
    check(r == Err(EmbeddingError::ZeroNorm), || format!("cancellation gave {r:?}"))?;
    Ok(format!("max deviation {worst:.1e}, rescaling {worst_scale:.1e}, cancellation -> ZeroNorm"))
}

fn permuted(scene: &Scene, order: &[usize]) -> Scene {
    let mut s = scene.clone();
    s.frames = order.iter().map(|&i| scene.frames[i].clone()).collect();
    s.masks = order.iter().map(|&i| scene.masks[i].clone()).collect();
    s.crops = order.iter().map(|&i| scene.crops[i].clone()).collect();
    s.labels = order.iter().map(|&i| scene.labels[i].clone()).collect();
    s
}

// synthetic end-to-end segmentation
fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut summary = Vec::new();
    for seed in 0..6u64 {
        let n_obj = 3 + seed as usize % 4;
        let n_frames = 4 + (seed as usize * 3) % 5;
        let spec = SynthSceneSpec::random(100 + seed, n_obj, n_frames);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let manifest = synth_scene(&spec)
            .and_then(|s| s.write(dir.path(), &[]))
            .map_err(|e| e.to_string())?;
        let scene = load_scene(&manifest).map_err(|e| e.to_string())?;
        let cfg = Config {
            embed_dim: scene.dim,
            ..Config::default()
        };
        let embedder = MockGateway::new(scene.dim, cfg.mock_embed_seed);
        let (map, _) = fuse(&scene, &cfg, None).map_err(|e| e.to_string())?;
        let report = segment_eval(&map, &scene, &cfg, &embedder).map_err(|e| e.to_string())?;
        check(report.metrics.miou == 1.0, || {
            format!("seed {seed}: mIoU {} ({} unmatched GT points)", report.metrics.miou, report.metrics.unmatched_gt)
        })?;
        check(map.objects.len() == spec.objects.len(), || {
            format!("seed {seed}: {} objects for {} instances", map.objects.len(), spec.objects.len())
        })?;
        let reference = dir.path().join("reference.ovom");
        write_object_map(&reference, &map).map_err(|e| e.to_string())?;
        let want = std::fs::read(&reference).map_err(|e| e.to_string())?;
        for trial in 0..2 {
            let mut order: Vec<usize> = (0..scene.frames.len()).collect();
            if trial == 0 {
                order.reverse();
            } else {
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
            }
            let (m2, _) = fuse(&permuted(&scene, &order), &cfg, None).map_err(|e| e.to_string())?;
            let p = dir.path().join(format!("perm{trial}.ovom"));
            write_object_map(&p, &m2).map_err(|e| e.to_string())?;
            let got = std::fs::read(&p).map_err(|e| e.to_string())?;
            check(got == want, || format!("seed {seed}: permutation {order:?} changes the object map"))?;
        }
        summary.push(format!("{n_obj}obj/{n_frames}fr"));
    }
    let took = start.elapsed();
    within(Duration::from_secs(60), took)?;
    Ok(format!(
        "6 scenes ({}) mIoU 1.0, counts match, permutation-invariant bytes; {took:.2?}",
        summary.join(" ")
    ))
}

fn couch_scene() -> (SynthSceneSpec, Vec<Frame>, Vec<ovmap_core::io::LabelMap>) {
    let mut spec = SynthSceneSpec::random(0, 1, 2);
    spec.objects = vec![
        Primitive {
            class: "couch".into(),
            shape: Shape::Box {
                center: [0.0, 0.0, 0.225],
                half: [0.8, 0.45, 0.225],
            },
            yaw: None,
        },
        Primitive {
            class: "cushion".into(),
            shape: Shape::Box {
                center: [0.1, 0.0, 0.55],
                half: [0.25, 0.2, 0.1],
            },
            yaw: None,
        },
    ];
    spec.cameras = [0.0f64, 0.5]
        .iter()
        .map(|az| CameraSpec {
            eye: [2.5 * az.cos(), 2.5 * az.sin(), 2.5],
            target: [0.0, 0.0, 0.2],
        })
        .collect();
    let scene = synth_scene(&spec).unwrap();
    (spec, scene.frames, scene.labels)
}

// asymmetric containment
fn criterion_7() -> Outcome {
    let (spec, frames, labels) = couch_scene();
    let (w, h) = (spec.width, spec.height);
    let mask = |fi: usize, ids: &[u16]| {
        let l = &labels[fi];
        let pix = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).filter(|&(u, v)| ids.contains(&l.get(u, v)));
        Mask2D::from_pixels(frames[fi].id, w, h, 0, pix).unwrap()
    };
    let e = vec![1.0f32, 0.0, 0.0];
    let obs = |m: Mask2D| Observation {
        mask: m,
        embedding: e.clone(),
    };
    // frame 0 sees couch and cushion as one segment, frame 1 separates them
    let observations = vec![vec![obs(mask(0, &[1, 2]))], vec![obs(mask(1, &[1])), obs(mask(1, &[2]))]];
    let run = |gamma: f64, delta: f64| {
        let params = FusionParams {
            gamma,
            delta,
            ..FusionParams::default()
        };
        fuse_scene(&frames, &observations, &params, None).map_err(|e| e.to_string())
    };
    // with gamma 0.05 only the delta test keeps them apart
    for gamma in [FusionParams::default().gamma, 0.05] {
        for delta in [0.1, 0.2, 0.3, 0.4, 0.45, 0.49] {
            let n = run(gamma, delta)?.objects.len();
            check(n == 2, || format!("gamma {gamma} delta {delta}: {n} objects"))?;
        }
    }
    let out = run(0.05, 0.45)?;
    let (a, b) = (&out.objects[0], &out.objects[1]);
    let (small, big) = if a.voxels.len() < b.voxels.len() { (a, b) } else { (b, a) };
    let (x, y) = voxel_iov(&small.voxels, &big.voxels).map_err(|e| e.to_string())?;
    let merged = run(0.05, 0.9)?.objects.len();
    check(merged == 1, || format!("gamma 0.05 delta 0.9 control: {merged} objects"))?;
    Ok(format!(
        "two objects for delta in 0.1..0.49 at gamma 0.25 and 0.05, one at delta 0.9; IoV(cushion, couch) = ({x:.2}, {y:.2})"
    ))
}

// synthetic retrieval
fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut chosen: BTreeMap<u64, Vec<ovmap_core::synth::SynthQuery>> = BTreeMap::new();
    let mut count: BTreeMap<QueryKind, usize> = BTreeMap::new();
    let kinds = [QueryKind::Near, QueryKind::Far, QueryKind::Left, QueryKind::Right];
    let mut seed = 0;
    while chosen.values().map(Vec::len).sum::<usize>() < 20 && seed < 50 {
        let spec = SynthSceneSpec::retrieval(seed);
        for q in generate_queries(&spec) {
            let total: usize = count.values().sum();
            // balance the kinds: take a query only while its kind is not ahead
            let have = count.get(&q.kind).copied().unwrap_or(0);
            if total < 20 && have <= total / kinds.len() {
                *count.entry(q.kind).or_default() += 1;
                chosen.entry(seed).or_default().push(q);
            }
        }
        seed += 1;
    }
    let total: usize = count.values().sum();
    check(total == 20, || format!("only {total} queries generated"))?;
    check(kinds.iter().all(|k| count.get(k).is_some_and(|n| *n > 0)), || format!("kind mix {count:?}"))?;

    let mut results = Vec::new();
    let mut misses = Vec::new();
    for (seed, qs) in &chosen {
        let spec = SynthSceneSpec::retrieval(*seed);
        let records: Vec<_> = qs.iter().map(|q| q.record(&spec.scene_id)).collect();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let manifest = synth_scene(&spec)
            .and_then(|s| s.write(dir.path(), &records))
            .map_err(|e| e.to_string())?;
        let scene = load_scene(&manifest).map_err(|e| e.to_string())?;
        let cfg = Config {
            embed_dim: scene.dim,
            ..Config::default()
        };
        let (map, _) = fuse(&scene, &cfg, None).map_err(|e| e.to_string())?;
        let oracle = OracleGateway::from_scene(&scene, MockGateway::new(scene.dim, cfg.mock_embed_seed))
            .ok_or("scene lacks ground truth")?;
        let report = retrieve_eval(&map, &scene, &records, GatewaySet::uniform(&oracle), &cfg, Some(dir.path()))
            .map_err(|e| e.to_string())?;
        for r in &report.records {
            if r.iou <= 0.25 {
                misses.push(format!("{:?} ({}, IoU {:.2})", r.text, r.status, r.iou));
            }
            results.push(GroundingResult::from_iou(
                r.predicted_box.unwrap_or(Box3::new(Vec3::zeros(), Vec3::zeros())),
                records[r.index].gt_box,
                r.iou,
                &[0.1, 0.25],
            ));
        }
    }
    let acc = grounding_accuracy(&results, &[0.1, 0.25]).map_err(|e| e.to_string())?;
    let a25 = acc.at(0.25).unwrap();
    check(a25 == 1.0, || format!("A@0.25 = {a25}; misses: {}", misses.join("; ")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..200 {
        let rs: Vec<GroundingResult> = (0..20)
            .map(|_| {
                let lo = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0);
                let gt = Box3::new(lo, lo + Vec3::new(rng.random_range(0.2..1.5), rng.random_range(0.2..1.5), rng.random_range(0.2..1.5)));
                let jitter = Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3));
                let grow = rng.random_range(0.5..1.6);
                let pred = Box3::new(gt.min + jitter, gt.min + jitter + gt.extent() * grow);
                GroundingResult::new(pred, gt, &[0.1, 0.25])
            })
            .collect();
        let a = grounding_accuracy(&rs, &[0.1, 0.25]).map_err(|e| e.to_string())?;
        check(a.at(0.25) <= a.at(0.1), || format!("trial {trial}: A@0.25 {:?} > A@0.1 {:?}", a.at(0.25), a.at(0.1)))?;
    }
    let took = start.elapsed();
    Ok(format!(
        "20 queries {count:?} over {} scenes, A@0.25 = {a25}, A@0.1 = {}; monotone on 200 noisy sets; {took:.2?}",
        chosen.len(),
        acc.at(0.1).unwrap()
    ))
}

/// Independent O(n m) metrics: nearest prediction within the radius (ties
/// to the lower index), then per-class confusion counts.
fn brute_metrics(pred: &[(Vec3, usize)], gt: &[(Vec3, usize)], r: f64) -> (f64, f64, f64) {
    let mut classes: Vec<usize> = gt.iter().map(|g| g.1).collect();
    classes.sort_unstable();
    classes.dedup();
    let assigned: Vec<Option<usize>> = gt
        .iter()
        .map(|(p, _)| {
            let mut best: Option<(f64, usize)> = None;
            for (i, (q, _)) in pred.iter().enumerate() {
                let d = (q - p).norm_squared();
                if d <= r * r && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            best.map(|(_, i)| pred[i].1)
        })
        .collect();
    let (mut miou, mut macc, mut fmiou) = (0.0, 0.0, 0.0);
    for &c in &classes {
        let n = gt.iter().filter(|g| g.1 == c).count() as f64;
        let tp = gt.iter().zip(&assigned).filter(|(g, a)| g.1 == c && **a == Some(c)).count() as f64;
        let fp = gt.iter().zip(&assigned).filter(|(g, a)| g.1 != c && **a == Some(c)).count() as f64;
        let fn_ = n - tp;
        let iou = tp / (tp + fp + fn_);
        miou += iou;
        macc += tp / n;
        fmiou += n / gt.len() as f64 * iou;
    }
    let k = classes.len() as f64;
    (miou / k, macc / k, fmiou)
}

// metrics oracle
fn criterion_9() -> Outcome {
    let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    let gt: Vec<(Vec3, usize)> = pts.iter().zip([0, 0, 1, 1]).map(|(p, c)| (*p, c)).collect();
    let pred: Vec<(Vec3, usize)> = pts.iter().zip([0, 1, 1, 1]).map(|(p, c)| (*p, c)).collect();
    let m = compute_metrics(&pred, &gt, 0.05).map_err(|e| e.to_string())?;
    check(m.per_class_iou[&0] == 0.5 && m.per_class_iou[&1] == 2.0 / 3.0, || format!("per-class IoU {:?}", m.per_class_iou))?;
    check((m.miou - 7.0 / 12.0).abs() <= f64::EPSILON, || format!("mIoU {} != 7/12", m.miou))?;
    check(m.macc == 0.75, || format!("mAcc {}", m.macc))?;
    check((m.fmiou - 7.0 / 12.0).abs() <= f64::EPSILON, || format!("fmIoU {}", m.fmiou))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for set in 0..50 {
        let k = rng.random_range(2..6);
        let mut cloud = |n: usize| -> Vec<(Vec3, usize)> {
            (0..n)
                .map(|_| {
                    let p = Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.3));
                    (p, rng.random_range(0..k))
                })
                .collect()
        };
        let gt = cloud(200);
        let pred = cloud(300);
        let r = 0.08;
        let Ok(got) = compute_metrics(&pred, &gt, r) else {
            return Err(format!("set {set}: no associations"));
        };
        let want = brute_metrics(&pred, &gt, r);
        let diff = (got.miou - want.0).abs().max((got.macc - want.1).abs()).max((got.fmiou - want.2).abs());
        check(diff <= 1e-12, || format!("set {set}: {:?} vs brute force {want:?}", (got.miou, got.macc, got.fmiou)))?;
    }
    Ok(format!("4-point example mIoU = {} (7/12), 50 random sets match brute force", m.miou))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("geometry oracle suite", criterion_1),
        ("merge-criterion truth table", criterion_2),
        ("DBSCAN equivalence", criterion_3),
        ("progressive-selection invariant", criterion_4),
        ("embedding aggregation", criterion_5),
        ("synthetic end-to-end segmentation", criterion_6),
        ("asymmetric-containment regression", criterion_7),
        ("synthetic retrieval", criterion_8),
        ("metrics oracle", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
