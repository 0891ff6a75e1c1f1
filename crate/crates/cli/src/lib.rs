//! The `arbor` command line: argument definitions, subcommand drivers, and the
//! mapping from library errors to process exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | I/O failure or malformed file |
//! | 3 | empty or degenerate input |
//! | 4 | mismatched or missing input, invalid configuration |
//! | 5 | internal check failure |

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use arbor::io::{self, read_pfm_raw, read_ply, read_ppm_raw, write_ply};
use arbor::reconstruct::{derive_targets, reconstruct, HistoryEntry, OptimConfig, ReconInputs};
use arbor::{Grid, GridSpec, RgbGrid, SunConfig};
use clap::{Args, Parser, Subcommand};

pub mod bench;
pub mod generate;

pub use bench::{bench_dataset, BenchOptions, BenchRow};
pub use generate::{generate_dataset, GenerateOptions};

#[derive(Debug, Parser)]
#[command(name = "arbor", version, about = "Tree point clouds from an orthophoto and a DSM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a dataset of procedural tree scenes.
    Generate(GenerateArgs),
    /// Reconstruct a point cloud from an orthophoto and a DSM.
    Reconstruct(ReconstructArgs),
    /// Score a predicted cloud against ground truth.
    Eval(EvalArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Reconstruction vs DSM-extrusion baseline over a generated dataset.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Raster width and height in pixels.
    #[arg(long, default_value_t = 128)]
    pub grid_size: usize,
    /// Meters per pixel.
    #[arg(long, default_value_t = 0.25)]
    pub pixel_size: f64,
    /// Sun azimuth, degrees clockwise from north.
    #[arg(long, default_value_t = 135.0)]
    pub sun_az: f64,
    /// Sun elevation above the horizon in degrees, (0, 90].
    #[arg(long, default_value_t = 55.0)]
    pub sun_el: f64,
    #[arg(long, default_value_t = 2000)]
    pub points_per_tree: usize,
    /// Disk radius of the simulated sensor in meters.
    #[arg(long, default_value_t = arbor::sensor::DEFAULT_SPLAT_RADIUS)]
    pub splat_radius: f64,
    /// Silhouette height threshold in meters.
    #[arg(long, default_value_t = 0.5)]
    pub h_min: f64,
    /// Worker threads; 0 uses all cores. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 800)]
    pub iters: usize,
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Silhouette weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_sil: f64,
    /// Height weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_dsm: f64,
    /// Footprint height threshold in meters.
    #[arg(long, default_value_t = 0.5)]
    pub h_min: f64,
    /// Height normaliser for the DSM term, meters.
    #[arg(long, default_value_t = arbor::losses::DEFAULT_H_NORM)]
    pub h_norm: f64,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ortho: PathBuf,
    #[arg(long)]
    pub dsm: PathBuf,
    /// Scene manifest supplying grid, sun and seed; flags override it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Binary shadow mask (PFM) used as the shadow target.
    #[arg(long)]
    pub shadow: Option<PathBuf>,
    /// Ground-truth cloud for final metrics (and geometric supervision with --lambda-geo).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output PLY; the loss history goes next to it as `<stem>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Chamfer weight [default: 0].
    #[arg(long)]
    pub lambda_geo: Option<f64>,
    /// Shadow weight [default: 0.5 with --shadow, else 0].
    #[arg(long)]
    pub lambda_shadow: Option<f64>,
    /// [default: manifest seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: manifest, else 0.25]
    #[arg(long)]
    pub pixel_size: Option<f64>,
    /// World x of the center of pixel (0, 0) [default: manifest, else centered]
    #[arg(long, allow_hyphen_values = true)]
    pub origin_x: Option<f64>,
    /// World y of the center of pixel (0, 0) [default: manifest, else centered]
    #[arg(long, allow_hyphen_values = true)]
    pub origin_y: Option<f64>,
    /// [default: manifest]
    #[arg(long, allow_hyphen_values = true)]
    pub sun_az: Option<f64>,
    /// [default: manifest]
    #[arg(long)]
    pub sun_el: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Match distance in meters.
    #[arg(long, default_value_t = arbor::metrics::DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per trial [default: random in 20..=50]
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of scenes written by `generate`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = arbor::metrics::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 800)]
    pub iters: usize,
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// CSV path [default: <dataset>/bench.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &arbor::Error) -> i32 {
    use arbor::Error::*;
    match e {
        Io { .. } | MalformedPly { .. } | MalformedPfm(_) | MalformedPpm(_) | MalformedManifest { .. } => 2,
        EmptyCloud | EmptyFootprint => 3,
        InvalidSun { .. } | InvalidConfig(_) | MissingColors | SpecMismatch(_) | MissingTarget(_) => 4,
    }
}

impl From<arbor::Error> for CliError {
    fn from(e: arbor::Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::new(2, format!("writing output: {e}"))
}

pub type CliResult = Result<(), CliError>;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Reconstruct(a) => cmd_reconstruct(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new(4, format!("thread pool: {e}")))
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> CliResult {
    let opts = GenerateOptions {
        count: a.count,
        seed: a.seed,
        grid_size: a.grid_size,
        pixel_size: a.pixel_size,
        sun_az: a.sun_az,
        sun_el: a.sun_el,
        points_per_tree: a.points_per_tree,
        splat_radius: a.splat_radius,
        h_min: a.h_min,
    };
    let lines = thread_pool(a.jobs)?.install(|| generate_dataset(&a.out, &opts))?;
    for l in lines {
        writeln!(out, "{l}").map_err(out_err)?;
    }
    Ok(())
}

/// Path of the loss history written next to a reconstructed PLY.
pub fn history_path(ply: &Path) -> PathBuf {
    let stem = ply.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ply.with_file_name(format!("{stem}.history.csv"))
}

pub fn write_history(path: &Path, history: &[HistoryEntry]) -> CliResult {
    let io_err = |e: csv::Error| CliError::new(2, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["iter", "total", "geo", "sil", "shadow", "dsm"]).map_err(io_err)?;
    for h in history {
        let b = &h.breakdown;
        w.write_record([
            h.iter.to_string(),
            h.total.to_string(),
            b.geo.to_string(),
            b.sil.to_string(),
            b.shadow.to_string(),
            b.dsm.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::new(2, format!("{}: {e}", path.display())))
}

/// Grid and sun for `reconstruct`: manifest values overridden by flags.
fn resolve_geometry(a: &ReconstructArgs, width: usize, height: usize) -> Result<(GridSpec, Option<SunConfig>, u64), CliError> {
    let manifest = a.manifest.as_ref().map(io::read_manifest).transpose()?;
    let (spec, sun, seed) = match &manifest {
        Some(m) => {
            if (m.grid.width, m.grid.height) != (width, height) {
                return Err(arbor::Error::SpecMismatch(format!(
                    "DSM is {width}x{height} but the manifest says {}x{}",
                    m.grid.width, m.grid.height
                ))
                .into());
            }
            (m.grid, Some(m.sun), m.seed)
        }
        None => (GridSpec::centered(width, height, a.pixel_size.unwrap_or(0.25))?, None, 0),
    };
    let pixel_size = a.pixel_size.unwrap_or(spec.pixel_size);
    let centered = GridSpec::centered(width, height, pixel_size)?;
    let default_origin = if manifest.is_some() {
        (spec.origin_x, spec.origin_y)
    } else {
        (centered.origin_x, centered.origin_y)
    };
    let spec = GridSpec::new(
        width,
        height,
        a.origin_x.unwrap_or(default_origin.0),
        a.origin_y.unwrap_or(default_origin.1),
        pixel_size,
    )?;
    let sun = match (sun, a.sun_az, a.sun_el) {
        (Some(s), az, el) => Some(SunConfig::new(az.unwrap_or(s.azimuth_deg), el.unwrap_or(s.elevation_deg))?),
        (None, Some(az), Some(el)) => Some(SunConfig::new(az, el)?),
        (None, None, None) => None,
        (None, _, _) => {
            return Err(CliError::new(4, "without --manifest, --sun-az and --sun-el must be given together"));
        }
    };
    Ok((spec, sun, a.seed.unwrap_or(seed)))
}

pub fn optim_config(o: &OptimArgs, pixel_size: f64) -> OptimConfig {
    let mut cfg = OptimConfig::for_pixel_size(pixel_size);
    cfg.iters = o.iters;
    cfg.n_points = o.points;
    cfg.lr = o.lr;
    cfg.h_min = o.h_min;
    cfg.h_norm = o.h_norm;
    cfg.log_every = o.log_every;
    cfg.weights.lambda_sil = o.lambda_sil;
    cfg.weights.lambda_dsm = o.lambda_dsm;
    cfg
}

fn cmd_reconstruct(a: &ReconstructArgs, out: &mut dyn Write) -> CliResult {
    let (w, h, dsm_values) = read_pfm_raw(&a.dsm)?;
    let (ow, oh, ortho_values) = read_ppm_raw(&a.ortho)?;
    if (ow, oh) != (w, h) {
        return Err(arbor::Error::SpecMismatch(format!("orthophoto is {ow}x{oh} but the DSM is {w}x{h}")).into());
    }
    let (spec, sun, seed) = resolve_geometry(a, w, h)?;
    let dsm = Grid::from_values(spec, dsm_values)?;
    let ortho = RgbGrid::from_values(spec, ortho_values)?;
    let shadow = match &a.shadow {
        Some(p) => {
            let (sw, sh, v) = read_pfm_raw(p)?;
            if (sw, sh) != (w, h) {
                return Err(arbor::Error::SpecMismatch(format!("shadow is {sw}x{sh} but the DSM is {w}x{h}")).into());
            }
            Some(Grid::from_values(spec, v)?)
        }
        None => None,
    };
    let gt = a.gt.as_ref().map(read_ply).transpose()?;

    let mut cfg = optim_config(&a.optim, spec.pixel_size);
    cfg.seed = seed;
    cfg.weights.lambda_geo = a.lambda_geo.unwrap_or(0.0);
    cfg.weights.lambda_shadow = a
        .lambda_shadow
        .unwrap_or(if shadow.is_some() { 0.5 } else { 0.0 });

    let result = reconstruct(
        &ReconInputs {
            ortho: &ortho,
            dsm: &dsm,
            sun,
            shadow_target: shadow.as_ref(),
            gt_cloud: gt.as_ref(),
        },
        &cfg,
    )?;
    write_ply(&result.cloud, &a.out)?;
    write_history(&history_path(&a.out), &result.loss_history)?;

    let first = result.loss_history.first().expect("history is never empty");
    let last = result.loss_history.last().expect("history is never empty");
    let b = &last.breakdown;
    writeln!(
        out,
        "iter={} total={} geo={} sil={} shadow={} dsm={} initial_total={}",
        last.iter, last.total, b.geo, b.sil, b.shadow, b.dsm, first.total
    )
    .map_err(out_err)?;
    if let Some(m) = &result.final_metrics {
        writeln!(
            out,
            "chamfer={} precision={} recall={} fscore={} tau={}",
            m.chamfer, m.fscore.precision, m.fscore.recall, m.fscore.f, m.tau
        )
        .map_err(out_err)?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let pred = read_ply(&a.pred)?;
    let gt = read_ply(&a.gt)?;
    let report = arbor::metrics::EvalReport::compute(&pred, &gt, a.tau)?;
    writeln!(out, "{report}").map_err(out_err)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let report = arbor::gradcheck::run(&arbor::gradcheck::GradcheckOptions {
        seed: a.seed,
        trials: a.trials,
        points: a.points,
        corrupt: a.corrupt_gradient,
    })?;
    writeln!(out, "{report}").map_err(out_err)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(5, "gradient check failed"))
    }
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let opts = BenchOptions {
        tau: a.tau,
        iters: a.iters,
        points: a.points,
        lr: a.lr,
    };
    let rows = thread_pool(a.jobs)?.install(|| bench_dataset(&a.dataset, &opts))?;
    let csv_path = a.out.clone().unwrap_or_else(|| a.dataset.join("bench.csv"));
    bench::write_csv(&csv_path, &rows)?;
    for (method, m) in bench::means(&rows) {
        writeln!(
            out,
            "{method}: scenes={} chamfer={} precision={} recall={} fscore={}",
            m.scenes, m.chamfer, m.precision, m.recall, m.fscore
        )
        .map_err(out_err)?;
    }
    Ok(())
}

/// Silhouette a reconstruction would derive from `ortho` and `dsm`.
pub(crate) fn derived_silhouette(ortho: &RgbGrid, dsm: &Grid, h_min: f64) -> Result<Grid, CliError> {
    Ok(derive_targets(ortho, dsm, h_min)?.silhouette)
}
