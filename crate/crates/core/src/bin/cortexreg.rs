use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cortexreg::classifier::{classify_volume, rasterize_annotation, surface_classifier, Annotation};
use cortexreg::config::{manifest_path, RunConfig};
use cortexreg::energy::{DeformationField, RegistrationProblem};
use cortexreg::field2::load_classifier;
use cortexreg::fmm::{redistance_fmm_band, DEFAULT_BAND_VOXELS};
use cortexreg::graph::{extract_graph, GraphSurface, Rect};
use cortexreg::io::KeyValues;
use cortexreg::camera::Camera;
use cortexreg::optimizer::{cascadic_register, DescentConfig};
use cortexreg::testbed::{SceneParams, SyntheticScene};
use cortexreg::volume::{load_mask, load_volume, write_volume};
use cortexreg::{Error, Result};

/// Crease classification and 2D-3D surface registration.
#[derive(Parser, Debug)]
#[command(name = "cortexreg", version)]
struct Cli {
    /// key=value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Extra KEY=VALUE override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Binary mask to signed distance by fast marching.
    Redistance {
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Narrow-band half-width in length units.
        #[arg(long)]
        band: Option<f64>,
    },
    /// Crease classifier on an SDF, optionally read off a graph surface.
    Classify {
        #[arg(long)]
        sdf: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        band: Option<f64>,
        /// Graph surface on which to sample the classifier.
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Output of the surface classifier image.
        #[arg(long)]
        surface_out: Option<PathBuf>,
        /// Clamp window lo,hi for the surface classifier.
        #[arg(long)]
        clamp: Option<String>,
    },
    /// Height field of the SDF zero level over a rectangle of a frame.
    Extract {
        #[arg(long)]
        sdf: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// x0,y0,x1,y1 in frame coordinates.
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
        /// nx,ny graph nodes.
        #[arg(long)]
        dims: Option<String>,
    },
    /// Cascadic registration of a surface to an image classifier.
    Register(RegisterArgs),
    /// Generate a synthetic scene bundle.
    Synthesize {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        curves: Option<usize>,
    },
    /// Score a deformation against a scene's ground truth.
    Evaluate {
        #[arg(long)]
        psi: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Scene bundle providing surface, f, g and camera.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    surface: Option<PathBuf>,
    #[arg(long)]
    f: Option<PathBuf>,
    #[arg(long)]
    g: Option<PathBuf>,
    /// Polyline annotation rasterized in place of g.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Output deformation field.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Positive weight, or "auto".
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    sobolev: Option<f64>,
    #[arg(long)]
    smoothing_px: Option<f64>,
}

/// Flags that were given, as `key=value` overrides.
#[derive(Default)]
struct Overrides(KeyValues);

impl Overrides {
    fn put<T: ToString>(&mut self, key: &str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.set(key, v.to_string());
        }
        self
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) -> &mut Self {
        if let Some(v) = value {
            self.0.set(key, v.display());
        }
        self
    }
}

fn overrides(cli: &Cli) -> Result<KeyValues> {
    let mut o = Overrides::default();
    o.put("seed", &cli.seed);
    match &cli.command {
        Command::Redistance { mask, out, band } => {
            o.path("mask", mask).path("out", out).put("band", band);
        }
        Command::Classify {
            sdf,
            out,
            eps,
            beta,
            band,
            surface,
            surface_out,
            clamp,
        } => {
            o.path("sdf", sdf)
                .path("out", out)
                .put("eps", eps)
                .put("beta", beta)
                .put("band", band)
                .path("surface", surface)
                .path("surface_out", surface_out)
                .put("clamp", clamp);
        }
        Command::Extract { sdf, out, region, dims } => {
            o.path("sdf", sdf).path("out", out).put("region", region).put("dims", dims);
        }
        Command::Register(a) => {
            o.path("scene", &a.scene)
                .path("surface", &a.surface)
                .path("f", &a.f)
                .path("g", &a.g)
                .path("annotation", &a.annotation)
                .path("camera", &a.camera)
                .path("out", &a.out)
                .put("lambda", &a.lambda)
                .put("levels", &a.levels)
                .put("max_iters", &a.max_iters)
                .put("sobolev", &a.sobolev)
                .put("smoothing_px", &a.smoothing_px);
        }
        Command::Synthesize { out, amplitude, curves } => {
            o.path("out", out).put("amplitude", amplitude).put("curves", curves);
        }
        Command::Evaluate { psi, scene, out } => {
            o.path("psi", psi).path("scene", scene).path("out", out);
        }
    }
    let mut kv = o.0;
    for item in &cli.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("--set expects KEY=VALUE, got {item:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn write_manifest(cfg: &RunConfig, command: &str, out: &Path) -> Result<()> {
    let path = manifest_path(out);
    cfg.manifest(command).write(&path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

/// `out` with `suffix` appended to the file name.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn pair<T: std::str::FromStr + Copy>(cfg: &RunConfig, key: &str) -> Result<[T; 2]> {
    let v = cfg.values.require_list::<T>(key, 2)?;
    Ok([v[0], v[1]])
}

fn cmd_redistance(mut cfg: RunConfig) -> Result<()> {
    let mask = load_mask(&cfg.input("mask")?)?;
    let out = cfg.path("out")?;
    let band = cfg
        .values
        .parse_value("band")?
        .unwrap_or(DEFAULT_BAND_VOXELS * mask.grid.spacing);
    if !(band > 0.0) {
        return Err(Error::Invalid("band must be positive".into()));
    }
    cfg.record("band", band);
    let sdf = redistance_fmm_band(&mask, Some(band))?;
    write_volume(&sdf, &out)?;
    write_manifest(&cfg, "redistance", &out)
}

fn cmd_classify(mut cfg: RunConfig) -> Result<()> {
    let sdf = load_volume(&cfg.input("sdf")?)?;
    let out = cfg.path("out")?;
    let surface = cfg.optional_input("surface")?;
    let (params, band) = cfg.classifier_params(sdf.grid.spacing)?;
    cfg.record("eps", params.eps);
    cfg.record("beta", params.beta);
    cfg.record("band", band);
    let c = classify_volume(&sdf, &params, band)?;
    write_volume(&c, &out)?;
    if let Some(surface) = surface {
        let surface = GraphSurface::load(&surface)?;
        let target = cfg.path("surface_out")?;
        let (lo, hi) = cfg.clamp()?;
        cfg.record_list("clamp", &[lo, hi]);
        let f = surface_classifier(&c, &surface, lo, hi)?;
        f.write(&target)?;
    }
    write_manifest(&cfg, "classify", &out)
}

fn cmd_extract(cfg: RunConfig) -> Result<()> {
    let sdf = load_volume(&cfg.input("sdf")?)?;
    let out = cfg.path("out")?;
    let r = cfg.values.require_list::<f64>("region", 4)?;
    let dims: [usize; 2] = pair(&cfg, "dims")?;
    let region = Rect {
        min: [r[0], r[1]],
        max: [r[2], r[3]],
    };
    if !(region.max[0] > region.min[0] && region.max[1] > region.min[1]) || dims[0] < 2 || dims[1] < 2 {
        return Err(Error::Invalid("region must be non-empty with at least 2x2 nodes".into()));
    }
    let surface = extract_graph(&sdf, region, cfg.frame()?, dims)?;
    surface.write(&out)?;
    write_manifest(&cfg, "extract", &out)
}

fn cmd_register(mut cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let scene = match cfg.optional_input("scene")? {
        Some(dir) => Some(SyntheticScene::read_bundle(&dir)?),
        None => None,
    };
    let surface = match (cfg.optional_input("surface")?, &scene) {
        (Some(p), _) => GraphSurface::load(&p)?,
        (None, Some(s)) => s.surface.clone(),
        (None, None) => return Err(Error::Invalid("register needs --surface or --scene".into())),
    };
    let camera = match (cfg.optional_input("camera")?, &scene) {
        (Some(p), _) => Camera::load(&p)?,
        (None, Some(s)) => s.camera,
        (None, None) => return Err(Error::Invalid("register needs --camera or --scene".into())),
    };
    let f = match (cfg.optional_input("f")?, &scene) {
        (Some(p), _) => load_classifier(&p)?,
        (None, Some(s)) => s.f_true.clone(),
        (None, None) => return Err(Error::Invalid("register needs --f or --scene".into())),
    };
    let g = match (cfg.optional_input("g")?, cfg.optional_input("annotation")?, &scene) {
        (Some(_), Some(_), _) => return Err(Error::Invalid("give either --g or --annotation".into())),
        (Some(p), None, _) => load_classifier(&p)?,
        (None, Some(p), _) => rasterize_annotation(&Annotation::load(&p)?, camera.width, camera.height)?,
        (None, None, Some(s)) => s.g_rendered.clone(),
        (None, None, None) => return Err(Error::Invalid("register needs --g, --annotation or --scene".into())),
    };
    let desc = DescentConfig::from_kv(&cfg.values)?;
    desc.to_kv(&mut cfg.values);
    let result = cascadic_register(&surface, &f, &g, &camera, &desc)?;
    cfg.record("lambda_used", result.lambda);
    result.psi.write(&out)?;
    result.trace.write_csv(&sibling(&out, ".trace.csv"))?;
    let problem = RegistrationProblem::new(surface, f, g, camera, result.lambda)?;
    let log = sibling(&out, ".energy.log");
    if log.exists() {
        std::fs::remove_file(&log).map_err(|e| Error::Io { path: log.clone(), source: e })?;
    }
    problem.total_energy(&result.psi)?.append_to(&log)?;
    if let Some(scene) = &scene {
        let metrics = scene.score(&result.psi)?;
        metrics.to_kv().write(&sibling(&out, ".metrics"))?;
        info!("ratio {:.4}", metrics.ratio);
    }
    write_manifest(&cfg, "register", &out)
}

fn cmd_synthesize(cfg: RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let params = SceneParams::from_kv(&cfg.values)?;
    let scene = SyntheticScene::generate(&params, cfg.seed)?;
    scene.write_bundle(&out)?;
    let mut manifest = cfg.manifest("synthesize");
    manifest.merge(&scene.manifest());
    manifest.write(&out.join("manifest.txt"))?;
    info!("scene with {} creases written to {}", scene.crease_curves.len(), out.display());
    Ok(())
}

fn cmd_evaluate(cfg: RunConfig) -> Result<()> {
    let psi = DeformationField::load(&cfg.input("psi")?)?;
    let scene = SyntheticScene::read_bundle(&cfg.input("scene")?)?;
    let out = cfg.path("out")?;
    if psi.grid.dims != scene.surface.grid.dims {
        return Err(Error::DimMismatch {
            expected: format!("{:?}", scene.surface.grid.dims),
            actual: format!("{:?}", psi.grid.dims),
        });
    }
    scene.score(&psi)?.to_kv().write(&out)?;
    write_manifest(&cfg, "evaluate", &out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(&cli)?)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Redistance { .. } => cmd_redistance(cfg),
        Command::Classify { .. } => cmd_classify(cfg),
        Command::Extract { .. } => cmd_extract(cfg),
        Command::Register(_) => cmd_register(cfg),
        Command::Synthesize { .. } => cmd_synthesize(cfg),
        Command::Evaluate { .. } => cmd_evaluate(cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
