//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and maps the outcome to an exit code: 0 on success, 2 on
//! input errors (bad flags, malformed or inconsistent files), 1 otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::bg_estimate::{self, BgEstimator, DEFAULT_GRID_H, DEFAULT_GRID_W, DEFAULT_RIDGE_LAMBDA};
use crate::envlight::{
    descriptor_from_envmap, make_partition, BasisPartition, IlluminationDescriptor,
};
use crate::error::{Error, Result};
use crate::forge::{self, ForgeConfig, Manifest, PlanarAnnotation, StoredTuple};
use crate::geometry::DEFAULT_WINDOW_RADIUS;
use crate::harmonize::{harmonize, HarmonizeRequest, DEFAULT_ALBEDO_EPS};
use crate::io::{self, CameraInfo};
use crate::metrics::{self, MetricReport};
use crate::shading_field::{
    compose_shading, reference_shading, shading_bases, ShadowConfig, SurfaceGeometry,
    DEFAULT_SAMPLES_PER_CELL,
};

pub const DEFAULT_K: usize = 32;
pub const DEFAULT_FOV_DEG: f64 = 60.0;

#[derive(Parser, Debug)]
#[command(
    name = "shadefield",
    version,
    about = "Shading-field image harmonization toolkit"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct ShadowArgs {
    /// Direction samples per basis cell.
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_CELL)]
    samples_per_cell: usize,
    /// Shadow ray march step (camera units; default half the median pixel spacing).
    #[arg(long)]
    ray_step: Option<f64>,
    /// Maximum shadow ray length (default: depth bounding-box diagonal).
    #[arg(long)]
    max_ray_distance: Option<f64>,
    /// Ray start offset along the normal (default: two steps).
    #[arg(long)]
    shadow_bias: Option<f64>,
    /// Plane-fit window radius for normals.
    #[arg(long, default_value_t = DEFAULT_WINDOW_RADIUS)]
    window_radius: usize,
}

impl ShadowArgs {
    fn config(&self, camera: &CameraInfo) -> ShadowConfig {
        ShadowConfig {
            samples_per_cell: self.samples_per_cell,
            ray_step: self.ray_step,
            max_ray_distance: self.max_ray_distance,
            shadow_bias: self.shadow_bias,
            ground_plane: camera.ground_plane,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct PartitionArgs {
    /// Number of equal-area cells.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Use one cell per pixel of a WxH environment map instead.
    #[arg(long, value_parser = parse_size)]
    env_pixels: Option<(usize, usize)>,
}

impl PartitionArgs {
    fn partition(&self) -> Result<BasisPartition> {
        match self.env_pixels {
            Some((w, h)) => {
                let p = BasisPartition::env_pixels(w, h);
                p.validate()?;
                Ok(p)
            }
            None => make_partition(self.k),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a synthetic tuple dataset.
    Forge {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long, default_value_t = 4)]
        envs: usize,
        #[arg(long, value_parser = parse_size, default_value = "640x480")]
        render_size: (usize, usize),
        #[arg(long, value_parser = parse_size, default_value = "640x480")]
        bg_size: (usize, usize),
        #[arg(long, value_parser = parse_size, default_value = "64x32")]
        env_size: (usize, usize),
        #[arg(long, default_value_t = DEFAULT_FOV_DEG)]
        fov: f64,
        #[arg(long, default_value = "train")]
        split: String,
        /// JSON polygon lists keyed by environment id.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Shading bases of a depth map.
    Bases {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[command(flatten)]
        partition: PartitionArgs,
        #[command(flatten)]
        shadow: ShadowArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Illumination descriptor of an environment map.
    Descriptor {
        #[arg(long)]
        env: PathBuf,
        #[command(flatten)]
        partition: PartitionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose shading from bases and a descriptor.
    Shade {
        #[arg(long)]
        bases: PathBuf,
        #[arg(long)]
        descriptor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense reference shading by integrating every environment pixel.
    OracleShade {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[command(flatten)]
        shadow: ShadowArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the background illumination estimator on a dataset.
    FitBg {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_RIDGE_LAMBDA)]
        lambda: f64,
        #[arg(long, value_parser = parse_size, default_value = "16x12")]
        grid: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a descriptor from a background image.
    EstimateBg {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        bg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-light a composited foreground.
    Harmonize(HarmonizeArgs),
    /// Foreground metrics of predictions over a dataset.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory with `<tuple id>.pfm` predictions; omit to score the
        /// input composites.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_json: PathBuf,
    },
}

#[derive(Args, Debug)]
struct HarmonizeArgs {
    /// Batch mode: harmonize every tuple of a dataset.
    #[arg(long, conflicts_with_all = ["composite", "mask", "depth", "camera", "src_shading", "target"])]
    manifest: Option<PathBuf>,
    /// Estimator weights for batch mode.
    #[arg(long, requires = "manifest")]
    weights: Option<PathBuf>,
    /// Batch mode: use the descriptor of the true background illumination.
    #[arg(long, requires = "manifest", conflicts_with = "weights")]
    oracle_target: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    composite: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    src_shading: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output PFM path; a PNG is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ALBEDO_EPS)]
    eps: f64,
    #[command(flatten)]
    shadow: ShadowArgs,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: usize = w
        .trim()
        .parse()
        .map_err(|e| format!("bad width in {s:?}: {e}"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|e| format!("bad height in {s:?}: {e}"))?;
    if w == 0 || h == 0 {
        return Err(format!("empty size {s:?}"));
    }
    Ok((w, h))
}

/// Every numeric default in one place, as printed by `--print-config`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: Option<String>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub samples_per_cell: usize,
    pub window_radius: usize,
    pub ridge_lambda: f64,
    pub feature_grid: (usize, usize),
    pub fov_deg: f64,
    pub render_size: (usize, usize),
    pub albedo_eps: f64,
    pub args: Option<String>,
}

impl RunConfig {
    fn resolve(cli: &Cli) -> Self {
        let mut cfg = RunConfig {
            subcommand: None,
            threads: cli.threads,
            seed: None,
            k: DEFAULT_K,
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            window_radius: DEFAULT_WINDOW_RADIUS,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            feature_grid: (DEFAULT_GRID_W, DEFAULT_GRID_H),
            fov_deg: DEFAULT_FOV_DEG,
            render_size: (forge::DEFAULT_RENDER_WIDTH, forge::DEFAULT_RENDER_HEIGHT),
            albedo_eps: DEFAULT_ALBEDO_EPS,
            args: None,
        };
        if let Some(cmd) = &cli.command {
            cfg.args = Some(format!("{cmd:?}"));
            cfg.subcommand = Some(
                match cmd {
                    Command::Forge {
                        render_size,
                        fov,
                        seed,
                        ..
                    } => {
                        cfg.seed = Some(*seed);
                        cfg.render_size = *render_size;
                        cfg.fov_deg = *fov;
                        "forge"
                    }
                    Command::Bases {
                        partition, shadow, ..
                    } => {
                        cfg.k = partition.k;
                        cfg.samples_per_cell = shadow.samples_per_cell;
                        cfg.window_radius = shadow.window_radius;
                        "bases"
                    }
                    Command::Descriptor { partition, .. } => {
                        cfg.k = partition.k;
                        "descriptor"
                    }
                    Command::Shade { .. } => "shade",
                    Command::OracleShade { shadow, .. } => {
                        cfg.window_radius = shadow.window_radius;
                        "oracle-shade"
                    }
                    Command::FitBg {
                        k, lambda, grid, ..
                    } => {
                        cfg.k = *k;
                        cfg.ridge_lambda = *lambda;
                        cfg.feature_grid = *grid;
                        "fit-bg"
                    }
                    Command::EstimateBg { .. } => "estimate-bg",
                    Command::Harmonize(h) => {
                        cfg.k = h.k;
                        cfg.albedo_eps = h.eps;
                        cfg.samples_per_cell = h.shadow.samples_per_cell;
                        cfg.window_radius = h.shadow.window_radius;
                        "harmonize"
                    }
                    Command::Evaluate { .. } => "evaluate",
                }
                .to_string(),
            );
        }
        cfg
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.print_config {
        return match serde_json::to_string_pretty(&RunConfig::resolve(&cli)) {
            Ok(s) => {
                println!("{s}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        };
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (see --help)");
        return 2;
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::InvalidInput("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(command)),
            Err(e) => Err(Error::Internal(format!("thread pool: {e}"))),
        },
        None => execute(command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Forge {
            out,
            seed,
            scenes,
            envs,
            render_size,
            bg_size,
            env_size,
            fov,
            split,
            annotations,
        } => {
            let annotations: BTreeMap<String, PlanarAnnotation> = match annotations {
                Some(p) => io::read_json(&p)?,
                None => BTreeMap::new(),
            };
            let named = forge::random_envs(envs, seed ^ 0x5eed_0e4f, env_size)?;
            let specs = forge::random_scenes(scenes, seed ^ 0x5eed_5ce4);
            let cfg = ForgeConfig {
                seed,
                render_size,
                bg_size,
                fov_deg: fov,
                shadow: ShadowConfig::default(),
                split,
            };
            info!("forging {scenes} scenes x {envs} environments");
            let tuples = forge::build_tuples(&specs, &named, &cfg, &annotations)?;
            let manifest = forge::write_dataset(&out, &tuples, &specs, &named, &cfg)?;
            info!(
                "wrote {} tuples to {}",
                manifest.tuples.len(),
                out.display()
            );
            Ok(())
        }
        Command::Bases {
            depth,
            camera,
            partition,
            shadow,
            out,
        } => {
            let (geom, cam) = load_geometry(&depth, &camera, shadow.window_radius)?;
            let bases = shading_bases(&geom, &partition.partition()?, &shadow.config(&cam))?;
            io::write_bases(&out, &bases)
        }
        Command::Descriptor {
            env,
            partition,
            out,
        } => {
            let env = io::read_envmap(&env)?;
            let d = descriptor_from_envmap(&env, &partition.partition()?);
            io::write_json(&out, &d)
        }
        Command::Shade {
            bases,
            descriptor,
            out,
        } => {
            let bases = io::read_bases(&bases)?;
            let d = read_descriptor(&descriptor)?;
            let s = compose_shading(&bases, &d)?;
            io::write_rgb_pfm(&out, &s)
        }
        Command::OracleShade {
            depth,
            camera,
            env,
            shadow,
            out,
        } => {
            let (geom, cam) = load_geometry(&depth, &camera, shadow.window_radius)?;
            let env = io::read_envmap(&env)?;
            let s = reference_shading(&geom, &env, &shadow.config(&cam))?;
            io::write_rgb_pfm(&out, &s)
        }
        Command::FitBg {
            manifest,
            k,
            lambda,
            grid,
            out,
        } => {
            let est = fit_from_manifest(&manifest, k, lambda, grid)?;
            info!("training mse {:?}", est.training_mse);
            io::write_json(&out, &est)
        }
        Command::EstimateBg { weights, bg, out } => {
            let est: BgEstimator = io::read_json(&weights)?;
            let bg = io::read_image(&bg)?;
            io::write_json(&out, &bg_estimate::estimate(&est, &bg)?)
        }
        Command::Harmonize(args) => run_harmonize(args),
        Command::Evaluate {
            manifest,
            pred_dir,
            out_csv,
            out_json,
        } => evaluate_manifest(&manifest, pred_dir.as_deref(), &out_csv, &out_json),
    }
}

fn load_geometry(
    depth: &Path,
    camera: &Path,
    radius: usize,
) -> Result<(SurfaceGeometry, CameraInfo)> {
    let cam: CameraInfo = io::read_json(camera)?;
    let depth = io::read_depth_pfm(depth)?;
    let geom = SurfaceGeometry::from_depth(depth, cam.intrinsics, cam.rotation(), radius)?;
    Ok((geom, cam))
}

fn read_descriptor(path: &Path) -> Result<IlluminationDescriptor> {
    let d: IlluminationDescriptor = io::read_json(path)?;
    d.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(d)
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Descriptor of the illumination the tuple's background was cropped from.
fn true_target(
    root: &Path,
    m: &Manifest,
    t: &StoredTuple,
    part: &BasisPartition,
) -> Result<IlluminationDescriptor> {
    let entry = m
        .envs
        .iter()
        .find(|e| e.id == t.meta.env_id)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "tuple {} names unknown env {}",
                t.meta.id, t.meta.env_id
            ))
        })?;
    let env = forge::load_env(root, entry)?;
    let rotated = crate::envlight::rotate_envmap(&env, t.meta.rotation_deg as f64);
    Ok(descriptor_from_envmap(&rotated, part))
}

/// Ridge fit on every tuple of a dataset: background features against the
/// descriptor of the rotated background illumination.
pub fn fit_from_manifest(
    manifest: &Path,
    k: usize,
    lambda: f64,
    grid: (usize, usize),
) -> Result<BgEstimator> {
    let root = manifest_root(manifest);
    let m = forge::read_manifest(manifest)?;
    let part = make_partition(k)?;
    let mut envs = BTreeMap::new();
    for e in &m.envs {
        envs.insert(e.id.clone(), forge::load_env(&root, e)?);
    }
    let samples = m
        .tuples
        .par_iter()
        .map(|entry| {
            let dir = root.join(&entry.dir);
            let bg = io::read_rgb_pfm(&dir.join("background.pfm"))?;
            let env = envs.get(&entry.env_id).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "tuple {} names unknown env {}",
                    entry.id, entry.env_id
                ))
            })?;
            let rotated = crate::envlight::rotate_envmap(env, entry.rotation_deg as f64);
            Ok((
                bg_estimate::extract_features(&bg, grid.0, grid.1)?,
                descriptor_from_envmap(&rotated, &part),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    bg_estimate::fit(&samples, lambda)
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing --{flag}")))
}

fn run_harmonize(args: HarmonizeArgs) -> Result<()> {
    if let Some(manifest) = &args.manifest {
        let out_dir = require(&args.out_dir, "out-dir")?;
        let estimator: Option<BgEstimator> = match &args.weights {
            Some(w) => Some(io::read_json(w)?),
            None if args.oracle_target => None,
            None => {
                return Err(Error::InvalidInput(
                    "batch mode needs --weights or --oracle-target".into(),
                ))
            }
        };
        let root = manifest_root(manifest);
        let m = forge::read_manifest(manifest)?;
        let part = match &estimator {
            Some(e) => e.partition,
            None => make_partition(args.k)?,
        };
        m.tuples
            .par_iter()
            .map(|entry| {
                let t = forge::load_tuple(&root, entry)?;
                let target = match &estimator {
                    Some(e) => bg_estimate::estimate(e, &t.background)?,
                    None => true_target(&root, &m, &t, &part)?,
                };
                let mut req = HarmonizeRequest::new(
                    &t.composite,
                    &t.mask,
                    &t.depth,
                    t.meta.camera.intrinsics,
                    t.meta.camera.rotation(),
                    &t.src_shading,
                    &target,
                );
                req.shadow = args.shadow.config(&t.meta.camera);
                req.window_radius = args.shadow.window_radius;
                req.eps = args.eps;
                let out = harmonize(&req)?;
                io::write_rgb_pfm(&out_dir.join(format!("{}.pfm", entry.id)), &out.image)?;
                io::write_png(&out_dir.join(format!("{}.png", entry.id)), &out.image)
            })
            .collect::<Result<Vec<()>>>()?;
        info!("harmonized {} tuples", m.tuples.len());
        return Ok(());
    }
    let composite = io::read_image(require(&args.composite, "composite")?)?;
    let mask = io::read_mask_png(require(&args.mask, "mask")?)?;
    let depth = io::read_depth_pfm(require(&args.depth, "depth")?)?;
    let cam: CameraInfo = io::read_json(require(&args.camera, "camera")?)?;
    let src_shading = io::read_rgb_pfm(require(&args.src_shading, "src-shading")?)?;
    let target = read_descriptor(require(&args.target, "target")?)?;
    let out = require(&args.out, "out")?;
    let mut req = HarmonizeRequest::new(
        &composite,
        &mask,
        &depth,
        cam.intrinsics,
        cam.rotation(),
        &src_shading,
        &target,
    );
    req.k = args.k;
    req.shadow = args.shadow.config(&cam);
    req.window_radius = args.shadow.window_radius;
    req.eps = args.eps;
    let result = harmonize(&req)?;
    io::write_rgb_pfm(out, &result.image)?;
    io::write_png(&out.with_extension("png"), &result.image)
}

#[derive(Debug, Clone, Serialize)]
struct ConditionSummary {
    tuples: usize,
    #[serde(flatten)]
    mean: MetricReport,
}

/// Per-tuple metrics of predictions (or of the input composites) against
/// the ground truth.
pub fn evaluate_tuples(
    manifest: &Path,
    pred_dir: Option<&Path>,
) -> Result<Vec<(String, String, MetricReport)>> {
    let root = manifest_root(manifest);
    let m = forge::read_manifest(manifest)?;
    m.tuples
        .par_iter()
        .map(|entry| {
            let t = forge::load_tuple(&root, entry)?;
            let pred = match pred_dir {
                Some(d) => io::read_rgb_pfm(&d.join(format!("{}.pfm", entry.id)))?,
                None => t.composite.clone(),
            };
            let r = metrics::evaluate_linear(&pred, &t.gt, &t.mask)?;
            Ok((entry.id.clone(), entry.condition.clone(), r))
        })
        .collect()
}

fn evaluate_manifest(
    manifest: &Path,
    pred_dir: Option<&Path>,
    out_csv: &Path,
    out_json: &Path,
) -> Result<()> {
    let rows = evaluate_tuples(manifest, pred_dir)?;
    let mut csv = String::from("tuple_id,fmae,fpsnr,fssim\n");
    for (id, _, r) in &rows {
        let _ = writeln!(csv, "{id},{},{},{}", r.fmae, r.fpsnr_db, r.fssim);
    }
    io::write_bytes(out_csv, csv.as_bytes())?;
    let mut groups: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for (_, cond, r) in &rows {
        groups.entry(cond.clone()).or_default().push(*r);
        groups.entry("all".into()).or_default().push(*r);
    }
    let summary: BTreeMap<String, ConditionSummary> = groups
        .into_iter()
        .filter_map(|(k, v)| {
            metrics::aggregate(&v).map(|mean| {
                (
                    k,
                    ConditionSummary {
                        tuples: v.len(),
                        mean,
                    },
                )
            })
        })
        .collect();
    io::write_json(out_json, &summary)
}
