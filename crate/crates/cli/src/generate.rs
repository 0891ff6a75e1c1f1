use std::fs;
use std::path::Path;

use arbor::io::write_scene;
use arbor::protree::{generate_scene, Range, SceneConfig};
use arbor::{GridSpec, SunConfig};
use rayon::prelude::*;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub count: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub pixel_size: f64,
    pub sun_az: f64,
    pub sun_el: f64,
    pub points_per_tree: usize,
    pub splat_radius: f64,
    pub h_min: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        let cfg = SceneConfig::default();
        Self {
            count: 1,
            seed: 0,
            grid_size: cfg.grid.width,
            pixel_size: cfg.grid.pixel_size,
            sun_az: cfg.sun.azimuth_deg,
            sun_el: cfg.sun.elevation_deg,
            points_per_tree: cfg.ranges.n_points.lo,
            splat_radius: cfg.splat_radius,
            h_min: cfg.h_min,
        }
    }
}

impl GenerateOptions {
    pub fn scene_config(&self) -> Result<SceneConfig, CliError> {
        let mut cfg = SceneConfig::default();
        cfg.grid = GridSpec::centered(self.grid_size, self.grid_size, self.pixel_size)?;
        cfg.sun = SunConfig::new(self.sun_az, self.sun_el)?;
        cfg.ranges.n_points = Range::fixed(self.points_per_tree);
        cfg.splat_radius = self.splat_radius;
        cfg.h_min = self.h_min;
        if !(self.splat_radius > 0.0) {
            return Err(CliError::new(4, format!("splat radius {} must be positive", self.splat_radius)));
        }
        cfg.ranges.validate()?;
        Ok(cfg)
    }
}

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:05}")
}

/// Writes `opts.count` scenes under `out`, scene `i` from seed `seed + i`.
/// Returns one summary line per scene, in scene order.
pub fn generate_dataset(out: &Path, opts: &GenerateOptions) -> Result<Vec<String>, CliError> {
    let cfg = opts.scene_config()?;
    fs::create_dir_all(out).map_err(|e| CliError::new(2, format!("{}: {e}", out.display())))?;
    (0..opts.count)
        .into_par_iter()
        .map(|i| {
            let seed = opts.seed.wrapping_add(i as u64);
            let scene = generate_scene(seed, &cfg)?;
            let name = scene_dir_name(i);
            write_scene(&scene, out.join(&name))?;
            let top = scene.cloud.positions.iter().map(|p| p.z).fold(0.0, f64::max);
            Ok(format!(
                "{name} seed={seed} points={} height={top:.3} crown_pixels={} shadow_pixels={}",
                scene.cloud.len(),
                scene.silhouette.count_positive(),
                scene.shadow.count_positive()
            ))
        })
        .collect()
}
