use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ovmap_core::config::Config;
use ovmap_core::gateway::{
    CachingGateway, HttpGateway, LanguageGateway, MockGateway, RecordingGateway, ReplayGateway,
    WithModel,
};
use ovmap_core::io::{
    load_scene, read_depth, read_embeddings, read_gt_points, read_labels, read_masks,
    read_object_map, read_queries, write_file, write_object_map, write_results, Scene,
    SceneManifest,
};
use ovmap_core::pipeline::{fuse, retrieve_eval, segment_eval};
use ovmap_core::retrieval::{retrieve, GatewaySet, GROUNDING_THRESHOLDS};
use ovmap_core::synth::{generate_queries, synth_scene, OracleGateway, SynthSceneSpec};

#[derive(Parser)]
#[command(name = "ovmap", version, about = "Open-vocabulary 3D mapping and object retrieval")]
struct Cli {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = GatewayKind::Mock)]
    gateway: GatewayKind,
    /// Log to answer from with `--gateway replay`.
    #[arg(long, global = true)]
    replay_log: Option<PathBuf>,
    /// Append every live exchange to this log.
    #[arg(long, global = true)]
    record_log: Option<PathBuf>,
    #[arg(long, global = true)]
    voxel_size: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Crop weights: mask,bbox,large,huge,surroundings.
    #[arg(long, global = true, value_delimiter = ',', num_args = 5)]
    weights: Option<Vec<f64>>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    /// Scene seed for `synth`, offline embedder seed elsewhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GatewayKind {
    /// HTTP endpoint from the configuration.
    Live,
    /// Offline: hashed embeddings, answers from ground truth when the scene has it.
    Mock,
    /// Answers from a recorded log.
    Replay,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Layout {
    Random,
    Retrieval,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene in the on-disk formats.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene description; overrides the generator flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Layout::Random)]
        layout: Layout,
        #[arg(long, default_value_t = 5)]
        objects: usize,
        #[arg(long, default_value_t = 6)]
        frames: usize,
    },
    /// Fuse a scene's masks into an object map.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label the object map and score it against ground-truth points.
    SegmentEval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Directory for `segment_metrics.txt` and `segment_metrics.kv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one referring expression.
    Retrieve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        query: String,
        /// Where to write orientation tile grids.
        #[arg(long)]
        tiles: Option<PathBuf>,
    },
    /// Run a query table and report grounding accuracy.
    RetrieveEval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Per-query results table; the summary goes next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tiles: Option<PathBuf>,
    },
    /// Describe any file this tool reads or writes.
    Inspect { path: PathBuf },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(v) = cli.voxel_size {
        cfg.voxel_size = v;
    }
    if let Some(v) = cli.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = cli.delta {
        cfg.delta = v;
    }
    if let Some(w) = &cli.weights {
        cfg.weights = w.as_slice().try_into().context("--weights needs five numbers")?;
    }
    if let Some(k) = cli.topk {
        cfg.top_k = k;
    }
    if let Some(s) = cli.seed {
        cfg.mock_embed_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_gateway(cli: &Cli, cfg: &Config, scene: &Scene) -> Result<Box<dyn LanguageGateway>> {
    Ok(match cli.gateway {
        GatewayKind::Mock => {
            let embedder = || MockGateway::new(scene.dim, cfg.mock_embed_seed);
            match OracleGateway::from_scene(scene, embedder()) {
                Some(o) => {
                    log::info!("mock gateway answers from ground truth");
                    Box::new(o)
                }
                None => Box::new(embedder()),
            }
        }
        GatewayKind::Replay => {
            let path = cli
                .replay_log
                .as_ref()
                .context("--gateway replay needs --replay-log")?;
            Box::new(ReplayGateway::open(path)?)
        }
        GatewayKind::Live => {
            let http = CachingGateway::new(HttpGateway::new(cfg.gateway(&cfg.parser_model))?);
            match &cli.record_log {
                Some(p) => Box::new(RecordingGateway::create(http, p)?),
                None => Box::new(http),
            }
        }
    })
}

fn check_map_hash(map_path: &Path, hash: &str, cfg: &Config) {
    if hash != cfg.hash() {
        log::warn!(
            "{} was built with a different configuration ({hash})",
            map_path.display()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            out,
            spec,
            layout,
            objects,
            frames,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("{}", p.display()))?;
                    toml::from_str::<SynthSceneSpec>(&text)
                        .with_context(|| format!("{}", p.display()))?
                }
                None => match layout {
                    Layout::Random => SynthSceneSpec::random(seed, *objects, *frames),
                    Layout::Retrieval => SynthSceneSpec::retrieval(seed),
                },
            };
            let queries: Vec<_> = generate_queries(&spec)
                .iter()
                .map(|q| q.record(&spec.scene_id))
                .collect();
            let manifest = synth_scene(&spec)?.write(out, &queries)?;
            println!(
                "{} objects, {} frames, {} queries -> {}",
                spec.objects.len(),
                spec.cameras.len(),
                queries.len(),
                manifest.display()
            );
        }
        Command::Fuse { scene, out } => {
            let cfg = load_config(&cli)?;
            let scene = load_scene(scene)?;
            let (map, stats) = fuse(&scene, &cfg, None)?;
            write_object_map(out, &map)?;
            println!(
                "frames {} masks {} refined {} points {} discarded {} objects {} -> {}",
                stats.frames,
                stats.raw_masks,
                stats.refined_masks,
                stats.lifted_points,
                stats.discarded_points,
                stats.objects,
                out.display()
            );
        }
        Command::SegmentEval { scene, map, out } => {
            let cfg = load_config(&cli)?;
            let scene = load_scene(scene)?;
            let m = read_object_map(map)?;
            check_map_hash(map, &m.config_hash, &cfg);
            let g = make_gateway(&cli, &cfg, &scene)?;
            let report = segment_eval(&m, &scene, &cfg, g.as_ref())?;
            write_file(&out.join("segment_metrics.txt"), report.table().as_bytes())?;
            write_file(&out.join("segment_metrics.kv"), report.key_values().as_bytes())?;
            print!("{}", report.table());
        }
        Command::Retrieve {
            scene,
            map,
            query,
            tiles,
        } => {
            let cfg = load_config(&cli)?;
            let scene = load_scene(scene)?;
            let m = read_object_map(map)?;
            check_map_hash(map, &m.config_hash, &cfg);
            let g = make_gateway(&cli, &cfg, &scene)?;
            let (p, v, r) = roles(g.as_ref(), &cfg);
            let set = GatewaySet {
                parser: &p,
                embedder: g.as_ref(),
                vlm: &v,
                reasoner: &r,
            };
            let o = retrieve(query, &m.objects, &scene.frames, set, &cfg.retrieval(), tiles.as_deref())?;
            let b = o.predicted_box;
            println!(
                "object {} candidates {} survivors {} decision {:?}\nbox {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
                o.object_id,
                o.candidates.len(),
                o.survivors.len(),
                o.decision.source,
                b.min.x,
                b.min.y,
                b.min.z,
                b.max.x,
                b.max.y,
                b.max.z
            );
        }
        Command::RetrieveEval {
            scene,
            map,
            queries,
            out,
            tiles,
        } => {
            let cfg = load_config(&cli)?;
            let scene = load_scene(scene)?;
            let m = read_object_map(map)?;
            check_map_hash(map, &m.config_hash, &cfg);
            let qs = read_queries(queries)?;
            if !qs.iter().any(|q| q.scene_id == scene.manifest.scene_id) {
                bail!(
                    "{}: no queries for scene {:?}",
                    queries.display(),
                    scene.manifest.scene_id
                );
            }
            let g = make_gateway(&cli, &cfg, &scene)?;
            let (p, v, r) = roles(g.as_ref(), &cfg);
            let set = GatewaySet {
                parser: &p,
                embedder: g.as_ref(),
                vlm: &v,
                reasoner: &r,
            };
            let report = retrieve_eval(&m, &scene, &qs, set, &cfg, tiles.as_deref())?;
            write_results(out, &report.records, &GROUNDING_THRESHOLDS)?;
            let mut summary = out.as_os_str().to_owned();
            summary.push(".summary.txt");
            write_file(Path::new(&summary), report.summary().as_bytes())?;
            print!("{}", report.summary());
        }
        Command::Inspect { path } => print!("{}", inspect(path)?),
    }
    Ok(())
}

fn roles<'a>(g: &'a dyn LanguageGateway, cfg: &Config) -> (WithModel<'a>, WithModel<'a>, WithModel<'a>) {
    (
        WithModel::new(g, &cfg.parser_model),
        WithModel::new(g, &cfg.vlm_model),
        WithModel::new(g, &cfg.reasoner_model),
    )
}

fn inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    Ok(match magic {
        b"OVOM" => read_object_map(path)?.summary(),
        b"OVMK" => {
            let a = read_masks(path)?;
            let mut levels = std::collections::BTreeMap::<u16, usize>::new();
            for r in &a.records {
                *levels.entry(r.mask.level).or_default() += 1;
            }
            format!("masks {} by level {levels:?}\n", a.records.len())
        }
        b"OVEM" => {
            let a = read_embeddings(path)?;
            format!("embeddings {} dim {} crop order {:?}\n", a.records.len(), a.dim, a.crop_order)
        }
        b"OVDP" => {
            let d = read_depth(path, 1000.0)?;
            let valid: Vec<f32> = d.data.iter().copied().filter(|x| *x > 0.0).collect();
            let (lo, hi) = valid
                .iter()
                .fold((f32::INFINITY, 0f32), |(a, b), &x| (a.min(x), b.max(x)));
            format!(
                "depth {}x{} valid {} range {lo:.3}..{hi:.3} m at scale 1000\n",
                d.width,
                d.height,
                valid.len()
            )
        }
        b"OVLB" => {
            let l = read_labels(path)?;
            let mut ids: Vec<u16> = l.data.iter().copied().filter(|i| *i != 0).collect();
            ids.sort_unstable();
            ids.dedup();
            format!("labels {}x{} instances {ids:?}\n", l.width, l.height)
        }
        b"OVGP" => {
            let p = read_gt_points(path)?;
            let mut ids: Vec<u32> = p.iter().map(|g| g.instance).collect();
            ids.sort_unstable();
            ids.dedup();
            format!("gt points {} instances {ids:?}\n", p.len())
        }
        _ => {
            let m = SceneManifest::parse(path)?;
            format!(
                "scene {} frames {} sampled {} image {}x{}\n",
                m.scene_id,
                m.frames.len(),
                m.sampled_frames().count(),
                m.intrinsics.width,
                m.intrinsics.height
            )
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // typed errors already print their cause, so skip repeats
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
