//! Per-scene reconstruction: derive targets from the orthophoto and DSM,
//! seed a point set inside the crown footprint, then minimise the combined
//! loss over point positions with Adam.

use crate::diffrender::{GradBuffer, SoftConfig};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossProblem, LossWeights, Targets, DEFAULT_H_NORM};
use crate::metrics::{self, FScore, DEFAULT_TAU};
use crate::rng::Rng;
use crate::types::{Grid, PointCloud, Rgb, RgbGrid, SunConfig, Vec3};

/// Minimum excess-green index `2g - r - b` for a pixel to count as vegetation.
pub const EXCESS_GREEN_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub n_points: usize,
    pub iters: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub soft: SoftConfig,
    pub seed: u64,
    /// Footprint height threshold in meters.
    pub h_min: f64,
    pub h_norm: f64,
    pub log_every: usize,
}

impl OptimConfig {
    /// Defaults for a raster with the given pixel size.
    pub fn for_pixel_size(pixel_size: f64) -> Self {
        Self {
            n_points: 2000,
            iters: 800,
            lr: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            soft: SoftConfig::for_pixel_size(pixel_size),
            seed: 0,
            h_min: 0.5,
            h_norm: DEFAULT_H_NORM,
            log_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if !(self.h_min >= 0.0) {
            return bad(format!("h_min {} must be non-negative", self.h_min));
        }
        self.weights.validate()?;
        self.soft.validate()
    }

    pub fn adam(&self) -> Adam {
        Adam {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Targets extracted from the sensor rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedTargets {
    pub silhouette: Grid,
    pub dsm: Grid,
}

/// Silhouette = tall (`dsm > h_min`) and green (excess-green above threshold);
/// the DSM target is the DSM masked to that silhouette.
pub fn derive_targets(ortho: &RgbGrid, dsm: &Grid, h_min: f64) -> Result<DerivedTargets> {
    ortho.spec.ensure_same(&dsm.spec)?;
    let mut silhouette = Grid::zeros(dsm.spec);
    let mut masked = Grid::zeros(dsm.spec);
    for (i, (&h, c)) in dsm.values.iter().zip(&ortho.values).enumerate() {
        if h > h_min && excess_green(*c) > EXCESS_GREEN_THRESHOLD {
            silhouette.values[i] = 1.0;
            masked.values[i] = h;
        }
    }
    Ok(DerivedTargets {
        silhouette,
        dsm: masked,
    })
}

pub fn excess_green(c: Rgb) -> f64 {
    2.0 * c[1] - c[0] - c[2]
}

/// Draws pixels with probability proportional to a non-negative mask.
pub(crate) struct FootprintSampler {
    cumulative: Vec<f64>,
    pixels: Vec<usize>,
}

impl FootprintSampler {
    pub fn new(mask: &Grid) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut pixels = Vec::new();
        let mut total = 0.0;
        for (i, &m) in mask.values.iter().enumerate() {
            if m > 0.0 {
                total += m;
                cumulative.push(total);
                pixels.push(i);
            }
        }
        if pixels.is_empty() {
            return Err(Error::EmptyFootprint);
        }
        Ok(Self { cumulative, pixels })
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let target = rng.next_f64() * total;
        let k = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.pixels.len() - 1);
        self.pixels[k]
    }
}

fn shade(c: Rgb, z: f64, h: f64) -> Rgb {
    let f = if h > 0.0 { (z / h).clamp(0.0, 1.0).sqrt() } else { 1.0 };
    [c[0] * f, c[1] * f, c[2] * f]
}

/// Seeds `n_points` points inside the footprint. Draw order per point: pixel,
/// x jitter, y jitter, height in `[0.2 H, H]`.
pub fn init_cloud(dsm: &Grid, silhouette: &Grid, ortho: &RgbGrid, n_points: usize, rng: &mut Rng) -> Result<PointCloud> {
    dsm.spec.ensure_same(&silhouette.spec)?;
    dsm.spec.ensure_same(&ortho.spec)?;
    let sampler = FootprintSampler::new(silhouette)?;
    let spec = dsm.spec;
    let mut positions = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let i = sampler.draw(rng);
        let (u, v) = (i % spec.width, i / spec.width);
        let (cx, cy) = spec.pixel_to_world(u, v);
        let x = cx + (rng.next_f64() - 0.5) * spec.pixel_size;
        let y = cy + (rng.next_f64() - 0.5) * spec.pixel_size;
        let h = dsm.values[i].max(0.0);
        let z = rng.uniform(0.2 * h, h);
        positions.push(Vec3::new(x, y, z));
        colors.push(shade(ortho.values[i], z, h));
    }
    Ok(PointCloud {
        positions,
        colors: Some(colors),
        classes: None,
    })
}

/// Assigns every point the orthophoto color of the pixel below it, darkened
/// with depth below the DSM surface. Points outside the raster use the
/// nearest edge pixel.
pub fn recolor(cloud: &mut PointCloud, ortho: &RgbGrid, dsm: &Grid) -> Result<()> {
    ortho.spec.ensure_same(&dsm.spec)?;
    let spec = ortho.spec;
    let colors = cloud
        .positions
        .iter()
        .map(|p| {
            let (u, v) = spec.world_to_pixel(*p);
            let u = u.round().clamp(0.0, spec.width as f64 - 1.0) as usize;
            let v = v.round().clamp(0.0, spec.height as f64 - 1.0) as usize;
            let i = spec.index(u, v);
            shade(ortho.values[i], p.z, dsm.values[i])
        })
        .collect();
    cloud.colors = Some(colors);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per coordinate plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; 3]; n],
            v: vec![[0.0; 3]; n],
            t: 0,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam update; increments `state.t` first.
    pub fn step(&self, state: &mut AdamState, params: &mut [Vec3], grad: &GradBuffer, lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(&grad.d_positions).enumerate() {
            let mut coords = p.to_array();
            let g = g.to_array();
            for c in 0..3 {
                let m = &mut state.m[k][c];
                let v = &mut state.v[k][c];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[c];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[c] * g[c];
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                coords[c] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            *p = Vec3::from_array(coords);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iter: usize,
    pub total: f64,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalMetrics {
    pub chamfer: f64,
    pub fscore: FScore,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub cloud: PointCloud,
    pub loss_history: Vec<HistoryEntry>,
    pub final_metrics: Option<FinalMetrics>,
}

/// Sensor inputs of one scene. Only the orthophoto and DSM are required.
#[derive(Debug, Clone, Copy)]
pub struct ReconInputs<'a> {
    pub ortho: &'a RgbGrid,
    pub dsm: &'a Grid,
    pub sun: Option<SunConfig>,
    pub shadow_target: Option<&'a Grid>,
    pub gt_cloud: Option<&'a PointCloud>,
}

/// Runs Adam on point positions from `init`, clamping z at 0 after each step.
///
/// History holds the loss at iteration 0, every `log_every` iterations, and
/// after the final step.
pub fn optimize(init: &PointCloud, problem: &LossProblem<'_>, cfg: &OptimConfig) -> Result<(PointCloud, Vec<HistoryEntry>)> {
    cfg.validate()?;
    problem.validate()?;
    if init.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut cloud = init.clone();
    for p in &mut cloud.positions {
        p.z = p.z.max(0.0);
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(cloud.len());
    let mut history = Vec::with_capacity(cfg.iters / cfg.log_every + 2);
    for it in 0..cfg.iters {
        let loss = losses::combined_loss(&cloud, problem)?;
        if it % cfg.log_every == 0 {
            history.push(HistoryEntry {
                iter: it,
                total: loss.value,
                breakdown: loss.breakdown,
            });
        }
        adam.step(&mut state, &mut cloud.positions, &loss.grad, cfg.lr);
        for p in &mut cloud.positions {
            p.z = p.z.max(0.0);
        }
    }
    let (total, breakdown) = losses::combined_value(&cloud, problem)?;
    history.push(HistoryEntry {
        iter: cfg.iters,
        total,
        breakdown,
    });
    Ok((cloud, history))
}

/// Full pipeline: targets, initialisation, optimisation, recoloring.
pub fn reconstruct(inputs: &ReconInputs<'_>, cfg: &OptimConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let spec = inputs.dsm.spec;
    inputs.ortho.spec.ensure_same(&spec)?;
    if let Some(sun) = &inputs.sun {
        sun.validate()?;
    }
    let targets = derive_targets(inputs.ortho, inputs.dsm, cfg.h_min)?;
    let problem = LossProblem {
        targets: Targets {
            silhouette: Some(&targets.silhouette),
            shadow: inputs.shadow_target,
            dsm: Some(&targets.dsm),
            gt_cloud: inputs.gt_cloud,
        },
        sun: inputs.sun,
        spec,
        soft: cfg.soft,
        weights: cfg.weights,
        h_norm: cfg.h_norm,
    };
    problem.validate()?;

    let mut rng = Rng::new(cfg.seed);
    let init = init_cloud(&targets.dsm, &targets.silhouette, inputs.ortho, cfg.n_points, &mut rng)?;
    let (mut cloud, loss_history) = optimize(&init, &problem, cfg)?;
    recolor(&mut cloud, inputs.ortho, inputs.dsm)?;

    let final_metrics = match inputs.gt_cloud {
        Some(gt) => Some(FinalMetrics {
            chamfer: metrics::eval_chamfer(&cloud, gt)?,
            fscore: metrics::fscore(&cloud, gt, DEFAULT_TAU)?,
            tau: DEFAULT_TAU,
        }),
        None => None,
    };
    Ok(ReconResult {
        cloud,
        loss_history,
        final_metrics,
    })
}
