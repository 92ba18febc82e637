use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use matlift::error::{Error, Result};
use matlift::lift::{select, Scene, SelectionParams, SelectionSession, SimilarityCloud};
use matlift::metrics::{
    eval_accuracy, eval_consistency, eval_robustness, AccuracyOptions, EvalReport, RobustnessOptions,
};
use matlift::oracle::{clickable_mask, sample_click, Click};
use matlift::render::raster::write_file;
use matlift::scene::{parse_obj, write_obj, ViewManifest};
use matlift::segment::{segment_object, SegmentParams};
use matlift::service::session::{
    bake_atlas, bake_labels, fibonacci_manifest, labels_from_bytes, load_asset, load_session, make_oracle, new_session_id, save_base,
    save_selection, save_view_exports, session_dir, BakeMode, SessionRecord,
};
use matlift::service::{http, Engine, EngineConfig};

#[derive(Debug, Parser)]
#[command(name = "matlift", version, about = "Material selection lifted to 3D")]
struct Cli {
    /// Engine config file (TOML with [render], [selection], [noise], [service]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct SceneArgs {
    /// OBJ file, or `demo` for the built-in 3-material sphere.
    asset: String,
    /// `fibonacci:N` or a camera manifest JSON file.
    #[arg(long)]
    cameras: Option<String>,
    /// Lifting view resolution.
    #[arg(long)]
    res: Option<u32>,
    /// Noise model overrides, e.g. `view_bias_sigma=0.3,bias_rate=0.2,seed=4`.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Protocol {
    Accuracy,
    Consistency,
    Robustness,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render view bundles (PNG, depth, material ids) and the camera manifest.
    RenderViews {
        asset: String,
        #[arg(long)]
        cameras: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        res: Option<u32>,
    },
    /// Select from one click and write a session directory.
    Select {
        #[command(flatten)]
        scene: SceneArgs,
        /// `<view>:<x>,<y>`
        #[arg(long)]
        click: String,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long)]
        k: Option<usize>,
        /// Session directory; a new one under the data dir by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the per-view mask and heatmap PGMs.
        #[arg(long)]
        no_masks: bool,
    },
    /// Segment the asset into material groups.
    Segment {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = matlift::segment::DEFAULT_TOTAL_CLICKS)]
        clicks: usize,
        #[arg(long, default_value_t = matlift::segment::DEFAULT_MERGE_TAU)]
        tau: f64,
        #[arg(long, default_value_t = matlift::segment::DEFAULT_MERGE_VIEWS)]
        merge_views: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol and print the report table.
    Eval {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Novel views per click (accuracy, consistency) or per click set (robustness).
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        clicks: Option<usize>,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Bake a session's selection or segmentation into the uv atlas.
    BakeUv {
        session: PathBuf,
        #[arg(long, default_value = "ids")]
        mode: String,
        #[arg(long, default_value_t = 1024)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => Ok(EngineConfig::default()),
    }
}

/// `key=value,...` into a JSON object of numbers.
fn parse_noise(spec: &str) -> Result<serde_json::Value> {
    let mut obj = serde_json::Map::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("noise entry `{part}` is not key=value")))?;
        let value: serde_json::Value = serde_json::from_str(v.trim())
            .map_err(|_| Error::InvalidArgument(format!("noise value `{v}` is not a number")))?;
        obj.insert(k.trim().to_string(), value);
    }
    Ok(serde_json::Value::Object(obj))
}

fn parse_click(spec: &str) -> Result<Click> {
    let bad = || Error::InvalidArgument(format!("click `{spec}` is not <view>:<x>,<y>"));
    let (view, xy) = spec.rsplit_once(':').ok_or_else(bad)?;
    let (x, y) = xy.split_once(',').ok_or_else(bad)?;
    Ok(Click::positive(
        view,
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ))
}

/// Lifting views from `--cameras`; `res` overrides the resolution of manifest cameras.
fn manifest_for(
    asset: &str,
    mesh: &matlift::scene::Mesh,
    cameras: Option<&str>,
    res: Option<u32>,
    cfg: &EngineConfig,
) -> Result<ViewManifest> {
    match cameras {
        None => fibonacci_manifest(mesh, asset, cfg.render.views, cfg),
        Some(spec) => match spec.strip_prefix("fibonacci:") {
            Some(n) => {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad camera count in `{spec}`")))?;
                fibonacci_manifest(mesh, asset, n, cfg)
            }
            None => {
                let path = Path::new(spec);
                if !path.is_file() {
                    return Err(Error::InvalidArgument(format!("camera manifest `{spec}` not found")));
                }
                let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{spec}: {e}")))?;
                let manifest = ViewManifest::from_json(asset, &text)?;
                if let Some(r) = res {
                    return ViewManifest::new(
                        asset,
                        manifest
                            .views
                            .into_iter()
                            .map(|mut v| {
                                v.camera = v.camera.with_resolution(r, r);
                                v
                            })
                            .collect(),
                    );
                }
                Ok(manifest)
            }
        },
    }
}

struct Prepared {
    config: EngineConfig,
    scene: Arc<Scene>,
}

fn prepare(args: &SceneArgs, base: &EngineConfig) -> Result<Prepared> {
    let mut overrides = json!({});
    if let Some(r) = args.res {
        overrides["render"] = json!({"resolution": r});
    }
    if let Some(n) = &args.noise {
        overrides["noise"] = parse_noise(n)?;
    }
    if let Some(s) = args.seed {
        overrides["selection"] = json!({"seed": s});
    }
    let config = base.with_overrides(&overrides)?;
    let mesh = load_asset(&args.asset)?;
    let manifest = manifest_for(&args.asset, &mesh, args.cameras.as_deref(), args.res, &config)?;
    Ok(Prepared {
        scene: Arc::new(Scene::new(mesh, manifest)?),
        config,
    })
}

fn render_views(asset: &str, cameras: &str, out: &Path, res: Option<u32>, base: &EngineConfig) -> Result<()> {
    let config = match res {
        Some(r) => base.with_overrides(&json!({"render": {"resolution": r}}))?,
        None => base.clone(),
    };
    let mesh = load_asset(asset)?;
    let manifest = manifest_for(asset, &mesh, Some(cameras), res, &config)?;
    let scene = Scene::new(mesh, manifest)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for v in &scene.manifest.views {
        scene.render(v).save(out)?;
    }
    write_file(out.join("manifest.json"), scene.manifest.to_json().as_bytes())?;
    eprintln!("wrote {} views to {}", scene.manifest.len(), out.display());
    Ok(())
}

fn run_select(
    args: &SceneArgs,
    click: &str,
    threshold: Option<f32>,
    k: Option<usize>,
    out: Option<&Path>,
    no_masks: bool,
    base: &EngineConfig,
) -> Result<()> {
    let click = parse_click(click)?;
    let p = prepare(args, base)?;
    let mut params = p.config.selection.params();
    if let Some(t) = threshold {
        params.threshold = t;
    }
    if let Some(k) = k {
        params.k = k;
    }
    params.validate()?;
    let oracle = make_oracle(&p.config);
    let session = select(&p.scene, &oracle, click.clone(), None, params, p.config.selection.lift())?;
    let id = out
        .and_then(|o| o.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(new_session_id);
    let dir = match out {
        Some(o) => o.to_path_buf(),
        None => session_dir(&p.config.data_dir(), &id),
    };
    let mut record = SessionRecord::new(&id, &args.asset, &p.config);
    record.params = params;
    record.click = Some(click);
    record.fingerprint = Some(format!("{:016x}", session.fingerprint()));
    save_base(&dir, &record, &p.scene)?;
    save_selection(&dir, &record, &session)?;
    if !no_masks {
        save_view_exports(&dir, &session, &params)?;
    }
    println!("{}", serde_json::to_string_pretty(session.timing()).expect("timing serializes"));
    eprintln!("session {id} written to {}", dir.display());
    Ok(())
}

fn run_segment(args: &SceneArgs, clicks: usize, tau: f64, merge_views: usize, out: &Path, base: &EngineConfig) -> Result<()> {
    let p = prepare(args, base)?;
    let params = SegmentParams {
        total_clicks: clicks,
        tau,
        merge_views,
        seed: p.config.selection.seed,
        selection: p.config.selection.params(),
        lift: p.config.selection.lift(),
    };
    let oracle = make_oracle(&p.config);
    let seg = segment_object(&p.scene, &oracle, &params)?;
    seg.save(out)?;
    seg.cloud.write(out.join("cloud.msc"))?;
    write_file(out.join("asset.obj"), write_obj(&p.scene.mesh).as_bytes())?;
    println!("{}", seg.to_json("labels.bin"));
    Ok(())
}

/// Seeded clickable view and click for `material`.
fn sample_material_click(scene: &Scene, material: i32, rng: &mut ChaCha8Rng) -> Result<Click> {
    use rand::seq::IndexedRandom;
    let views: Vec<_> = scene
        .manifest
        .views
        .iter()
        .map(|v| scene.render(v))
        .filter(|b| clickable_mask(b, material).is_ok())
        .collect();
    let view = views.choose(rng).ok_or_else(|| Error::Unselectable {
        material,
        reason: "not clickable in any lifting view".into(),
    })?;
    sample_click(view, material, rng)
}

fn run_eval(
    args: &SceneArgs,
    protocol: Protocol,
    views: Option<usize>,
    clicks: Option<usize>,
    json_out: Option<&Path>,
    base: &EngineConfig,
) -> Result<()> {
    let p = prepare(args, base)?;
    let oracle = make_oracle(&p.config);
    let seed = p.config.selection.seed;
    let params = p.config.selection.params();
    let lift = p.config.selection.lift();
    let materials = p.scene.mesh.material_count() as i32;
    let report = match protocol {
        Protocol::Accuracy => {
            let opts = AccuracyOptions {
                n_views: views.unwrap_or(p.config.render.eval_views),
                n_clicks: clicks.unwrap_or(matlift::metrics::DEFAULT_EVAL_CLICKS),
                seed,
                params,
                config: lift,
            };
            eval_accuracy(&p.scene, &oracle, &opts)?
        }
        Protocol::Consistency => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scores = Vec::new();
            for m in 0..materials {
                let click = match sample_material_click(&p.scene, m, &mut rng) {
                    Ok(c) => c,
                    Err(e) => {
                        log::warn!("material {m} skipped: {e}");
                        continue;
                    }
                };
                let session: SelectionSession = select(&p.scene, &oracle, click, None, params, lift)?;
                let score = eval_consistency(&session, views.unwrap_or(p.config.render.eval_views), seed)?;
                println!("material {m}: consistency {score:.2}");
                scores.push(score);
            }
            EvalReport {
                scene: args.asset.clone(),
                consistency: Some(mean(&scores)?),
                ..EvalReport::default()
            }
        }
        Protocol::Robustness => {
            let mut scores = Vec::new();
            for m in 0..materials {
                let opts = RobustnessOptions {
                    n_clicks: clicks.unwrap_or(matlift::metrics::DEFAULT_EVAL_CLICKS),
                    n_views: views.unwrap_or(RobustnessOptions::default().n_views),
                    seed: seed.wrapping_add(m as u64),
                    params,
                    config: lift,
                };
                match eval_robustness(&p.scene, &oracle, m, &opts) {
                    Ok(score) => {
                        println!("material {m}: robustness {score:.2}");
                        scores.push(score);
                    }
                    Err(e @ Error::Unselectable { .. }) => log::warn!("material {m} skipped: {e}"),
                    Err(e) => return Err(e),
                }
            }
            EvalReport {
                scene: args.asset.clone(),
                robustness: Some(mean(&scores)?),
                ..EvalReport::default()
            }
        }
    };
    print!("{}", report.to_table());
    if let Some(path) = json_out {
        write_file(path, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no material could be evaluated"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

fn run_bake(dir: &Path, mode: &str, size: u32, out: &Path) -> Result<()> {
    let mode: BakeMode = mode.parse()?;
    let pgm = if dir.join("session.json").is_file() {
        let loaded = load_session(dir)?;
        bake_atlas(
            &loaded.scene.mesh,
            loaded.selection.as_ref(),
            None,
            &loaded.record.params,
            mode,
            size,
        )?
    } else if dir.join("labels.bin").is_file() {
        if mode != BakeMode::Ids {
            return Err(Error::InvalidArgument("segmentation output only bakes ids".into()));
        }
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(path, e))
        };
        let mesh = parse_obj(&String::from_utf8_lossy(&read("asset.obj")?))?;
        let cloud = SimilarityCloud::decode(&read("cloud.msc")?)?;
        let labels = labels_from_bytes(&read("labels.bin")?)?;
        bake_labels(&mesh, cloud, &labels, &SelectionParams::default(), size)?
    } else {
        return Err(Error::InvalidArgument(format!(
            "{} holds neither a session nor a segmentation",
            dir.display()
        )));
    };
    write_file(out, &pgm)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::RenderViews { asset, cameras, out, res } => render_views(&asset, &cameras, &out, res, &config),
        Command::Select {
            scene,
            click,
            threshold,
            k,
            out,
            no_masks,
        } => run_select(&scene, &click, threshold, k, out.as_deref(), no_masks, &config),
        Command::Segment {
            scene,
            clicks,
            tau,
            merge_views,
            out,
        } => run_segment(&scene, clicks, tau, merge_views, &out, &config),
        Command::Eval {
            scene,
            protocol,
            views,
            clicks,
            json,
        } => run_eval(&scene, protocol, views, clicks, json.as_deref(), &config),
        Command::BakeUv { session, mode, size, out } => run_bake(&session, &mode, size, &out),
        Command::Serve { port } => {
            let port = port.unwrap_or(config.service.port);
            let engine = Arc::new(Engine::new(config.clone(), config.data_dir()));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(http::serve(engine, port))
                .map_err(|e| Error::io(format!("port {port}"), e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
