use std::fs;
use std::path::Path;

use arbor::io::{read_scene, scene::MANIFEST_NAME};
use arbor::metrics::{baseline_extrude, EvalReport};
use arbor::reconstruct::{reconstruct, OptimConfig, ReconInputs};
use arbor::Rng;
use rayon::prelude::*;

use crate::{derived_silhouette, CliError};

pub const METHOD_RECONSTRUCT: &str = "reconstruct";
pub const METHOD_BASELINE: &str = "baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub tau: f64,
    pub iters: usize,
    pub points: usize,
    pub lr: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            tau: arbor::metrics::DEFAULT_TAU,
            iters: 800,
            points: 2000,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scene: String,
    pub method: &'static str,
    pub report: EvalReport,
}

/// Outcome of both methods on one scene, plus the reconstruction's total loss
/// before the first and after the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBench {
    pub reconstruct: EvalReport,
    pub baseline: EvalReport,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Means {
    pub scenes: usize,
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Scene directories (those holding a manifest) in name order.
pub fn scene_dirs(dataset: &Path) -> Result<Vec<String>, CliError> {
    let io_err = |e: std::io::Error| CliError::new(2, format!("{}: {e}", dataset.display()));
    let mut names = Vec::new();
    for entry in fs::read_dir(dataset).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if entry.path().join(MANIFEST_NAME).is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Input-only reconstruction and the extrusion baseline on one scene. Both use
/// the scene seed; the baseline draws as many points as the reconstruction.
pub fn bench_scene(dir: &Path, opts: &BenchOptions) -> Result<SceneBench, CliError> {
    let scene = read_scene(dir)?;
    let spec = scene.manifest.grid;
    let mut cfg = OptimConfig::for_pixel_size(spec.pixel_size);
    cfg.iters = opts.iters;
    cfg.n_points = opts.points;
    cfg.lr = opts.lr;
    cfg.seed = scene.manifest.seed;
    cfg.weights.lambda_geo = 0.0;
    let recon = reconstruct(
        &ReconInputs {
            ortho: &scene.ortho,
            dsm: &scene.dsm,
            sun: Some(scene.manifest.sun),
            shadow_target: Some(&scene.shadow),
            gt_cloud: None,
        },
        &cfg,
    )?;
    let silhouette = derived_silhouette(&scene.ortho, &scene.dsm, cfg.h_min)?;
    let mut rng = Rng::new(scene.manifest.seed);
    let baseline = baseline_extrude(&scene.dsm, &silhouette, &scene.ortho, opts.points, &mut rng)?;
    let history = &recon.loss_history;
    Ok(SceneBench {
        reconstruct: EvalReport::compute(&recon.cloud, &scene.cloud, opts.tau)?,
        baseline: EvalReport::compute(&baseline, &scene.cloud, opts.tau)?,
        initial_loss: history.first().map_or(f64::NAN, |h| h.total),
        final_loss: history.last().map_or(f64::NAN, |h| h.total),
    })
}

/// Every scene under `dataset`, in scene order.
pub fn bench_scenes(dataset: &Path, opts: &BenchOptions) -> Result<Vec<(String, SceneBench)>, CliError> {
    let names = scene_dirs(dataset)?;
    let results: Vec<SceneBench> = names
        .par_iter()
        .map(|n| bench_scene(&dataset.join(n), opts))
        .collect::<Result<_, _>>()?;
    Ok(names.into_iter().zip(results).collect())
}

/// Two rows per scene, in scene order.
pub fn rows(scenes: &[(String, SceneBench)]) -> Vec<BenchRow> {
    scenes
        .iter()
        .flat_map(|(scene, b)| {
            [
                BenchRow {
                    scene: scene.clone(),
                    method: METHOD_RECONSTRUCT,
                    report: b.reconstruct,
                },
                BenchRow {
                    scene: scene.clone(),
                    method: METHOD_BASELINE,
                    report: b.baseline,
                },
            ]
        })
        .collect()
}

pub fn bench_dataset(dataset: &Path, opts: &BenchOptions) -> Result<Vec<BenchRow>, CliError> {
    Ok(rows(&bench_scenes(dataset, opts)?))
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let io_err = |e: csv::Error| CliError::new(2, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["scene", "method", "chamfer", "precision", "recall", "fscore"])
        .map_err(io_err)?;
    for r in rows {
        let m = &r.report;
        w.write_record([
            r.scene.clone(),
            r.method.to_string(),
            m.chamfer.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.fscore.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::new(2, format!("{}: {e}", path.display())))
}

/// Per-method means, reconstruction first.
pub fn means(rows: &[BenchRow]) -> Vec<(&'static str, Means)> {
    [METHOD_RECONSTRUCT, METHOD_BASELINE]
        .into_iter()
        .map(|method| {
            let mut m = Means::default();
            for r in rows.iter().filter(|r| r.method == method) {
                m.scenes += 1;
                m.chamfer += r.report.chamfer;
                m.precision += r.report.precision;
                m.recall += r.report.recall;
                m.fscore += r.report.fscore;
            }
            if m.scenes > 0 {
                let n = m.scenes as f64;
                m.chamfer /= n;
                m.precision /= n;
                m.recall /= n;
                m.fscore /= n;
            }
            (method, m)
        })
        .collect()
}
