//! Central finite-difference verification of every analytic gradient.
//!
//! Each trial draws a random point cloud, raster, soft configuration and sun,
//! reduces each renderer to a scalar with random per-pixel weights, and
//! compares the analytic gradient of that scalar against finite differences
//! of the forward pass alone, component by component.
//!
//! A component passes when `|a - n| <= max(1e-3 · max(|a|, |n|), 1e-8)`.
//! The objectives are only piecewise smooth: splats switch off at the
//! truncation radius and Chamfer changes its nearest neighbours. When the
//! `±h` stencil straddles such a switch the two one-sided differences
//! disagree with each other; the component is then checked against the
//! second-order one-sided difference on the smooth side and counted as a kink.
//! If cutoffs lie on both sides, the check is repeated with smaller steps.

use std::fmt;

use crate::diffrender::{
    soft_dsm, soft_dsm_backward, soft_shadow, soft_shadow_backward, soft_silhouette, soft_silhouette_backward,
    GradBuffer, SoftConfig,
};
use crate::error::Result;
use crate::losses::{chamfer, chamfer_value, combined_loss, combined_value, LossProblem, LossWeights, Targets};
use crate::rng::Rng;
use crate::types::{Grid, GridSpec, PointCloud, SunConfig, Vec3};

pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-8;
/// Finite-difference step as a fraction of the splat bandwidth.
pub const STEP_PER_SIGMA: f64 = 1e-4;
/// Step multipliers tried in turn when a stencil hits more than one cutoff.
pub const STEP_REFINEMENTS: [f64; 3] = [1.0, 1.0 / 8.0, 1.0 / 64.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Silhouette,
    Dsm,
    Shadow,
    Chamfer,
    Combined,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Silhouette,
        Family::Dsm,
        Family::Shadow,
        Family::Chamfer,
        Family::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Silhouette => "soft_silhouette",
            Family::Dsm => "soft_dsm",
            Family::Shadow => "soft_shadow",
            Family::Chamfer => "chamfer",
            Family::Combined => "combined_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub trials: usize,
    /// Fixed point count; `None` draws 20..=50 per trial.
    pub points: Option<usize>,
    /// Perturbs the analytic silhouette gradient so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            points: None,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReport {
    pub family: Family,
    /// Largest normalised error `|a - n| / max(|a|, |n|, 1e-5)`.
    pub max_error: f64,
    pub components: usize,
    pub kinks: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub families: Vec<FamilyReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(|f| f.failures == 0)
    }

    pub fn family(&self, family: Family) -> &FamilyReport {
        self.families.iter().find(|f| f.family == family).expect("all families present")
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.families {
            writeln!(
                f,
                "{:<16} max_rel_err={:.3e} components={} kinks={} failures={}",
                r.family.name(),
                r.max_error,
                r.components,
                r.kinks,
                r.failures
            )?;
        }
        write!(
            f,
            "{} after {} trials",
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials
        )
    }
}

/// Normalised disagreement used for every comparison.
pub fn normalized_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR / REL_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Pass(f64),
    Kink(f64),
    Fail(f64),
}

/// Compares an analytic derivative at `x` against finite differences of
/// `f(k) = F(x + k·h)`, given `f0 = F(x)`.
///
/// When the central difference disagrees and the first-order one-sided
/// differences disagree with each other, the stencil straddles a kink or
/// cutoff; the second-order one-sided differences on either side are then
/// tried.
pub fn judge(analytic: f64, f0: f64, h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Verdict> {
    let fp = f(1.0)?;
    let fm = f(-1.0)?;
    let central = (fp - fm) / (2.0 * h);
    let e = normalized_error(analytic, central);
    if e <= REL_TOL {
        return Ok(Verdict::Pass(e));
    }
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    if normalized_error(fwd, bwd) > REL_TOL {
        let fwd2 = (-3.0 * f0 + 4.0 * fp - f(2.0)?) / (2.0 * h);
        let bwd2 = (3.0 * f0 - 4.0 * fm + f(-2.0)?) / (2.0 * h);
        let e1 = normalized_error(analytic, fwd2).min(normalized_error(analytic, bwd2));
        if e1 <= REL_TOL {
            return Ok(Verdict::Kink(e1));
        }
    }
    Ok(Verdict::Fail(e))
}

/// Checks `analytic` against finite differences of `f` over every coordinate.
pub fn check_gradient(
    cloud: &PointCloud,
    analytic: &GradBuffer,
    h: f64,
    f: impl Fn(&PointCloud) -> Result<f64>,
    report: &mut FamilyReport,
) -> Result<()> {
    let f0 = f(cloud)?;
    let mut probe = cloud.clone();
    for i in 0..cloud.len() {
        let a = analytic.d_positions[i].to_array();
        let base = cloud.positions[i].to_array();
        for c in 0..3 {
            let mut verdict = Verdict::Fail(f64::INFINITY);
            for (level, &scale) in STEP_REFINEMENTS.iter().enumerate() {
                let step = h * scale;
                let v = judge(a[c], f0, step, |k| {
                    let mut shifted = base;
                    shifted[c] = base[c] + k * step;
                    probe.positions[i] = Vec3::from_array(shifted);
                    f(&probe)
                })?;
                verdict = match (level, v) {
                    (0, v) => v,
                    (_, Verdict::Pass(e)) => Verdict::Kink(e),
                    (_, Verdict::Kink(e)) => Verdict::Kink(e),
                    (_, Verdict::Fail(_)) => verdict,
                };
                if !matches!(verdict, Verdict::Fail(_)) {
                    break;
                }
            }
            probe.positions[i] = cloud.positions[i];

            report.components += 1;
            match verdict {
                Verdict::Pass(e) => report.max_error = report.max_error.max(e),
                Verdict::Kink(e) => {
                    report.kinks += 1;
                    report.max_error = report.max_error.max(e);
                }
                Verdict::Fail(e) => {
                    report.failures += 1;
                    report.max_error = report.max_error.max(e);
                }
            }
        }
    }
    Ok(())
}

fn weighted_sum(grid: &Grid, w: &Grid) -> f64 {
    grid.values.iter().zip(&w.values).map(|(a, b)| a * b).sum()
}

struct Trial {
    spec: GridSpec,
    soft: SoftConfig,
    sun: SunConfig,
    cloud: PointCloud,
    other: PointCloud,
    weights: Grid,
}

fn draw_cloud(rng: &mut Rng, n: usize, half: f64, z_max: f64) -> PointCloud {
    PointCloud::from_positions(
        (0..n)
            .map(|_| {
                let x = rng.uniform(-half, half);
                let y = rng.uniform(-half, half);
                let z = rng.uniform(0.0, z_max);
                Vec3::new(x, y, z)
            })
            .collect(),
    )
}

fn draw_trial(rng: &mut Rng, points: Option<usize>) -> Result<Trial> {
    let size = rng.int_inclusive(10, 16) as usize;
    let pixel = rng.uniform(0.2, 0.5);
    let spec = GridSpec::centered(size, size, pixel)?;
    let soft = SoftConfig {
        sigma: pixel * rng.uniform(0.7, 1.5),
        alpha: rng.uniform(0.3, 1.0),
        beta: rng.uniform(0.5, 3.0),
        trunc: rng.uniform(2.5, 4.0),
        eps_ground: 10f64.powf(rng.uniform(-5.0, -2.0)),
    };
    let sun = SunConfig::new(rng.uniform(0.0, 360.0), rng.uniform(20.0, 90.0))?;
    let n = points.unwrap_or_else(|| rng.int_inclusive(20, 50) as usize);
    let half = 0.45 * size as f64 * pixel;
    let cloud = draw_cloud(rng, n, half, 2.0);
    let m = rng.int_inclusive(20, 50) as usize;
    let other = draw_cloud(rng, m, half, 2.0);
    let weights = Grid::from_values(spec, (0..spec.len()).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    Ok(Trial {
        spec,
        soft,
        sun,
        cloud,
        other,
        weights,
    })
}

/// Runs the full suite.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut reports: Vec<FamilyReport> = Family::ALL
        .iter()
        .map(|&family| FamilyReport {
            family,
            max_error: 0.0,
            components: 0,
            kinks: 0,
            failures: 0,
        })
        .collect();
    let mut rng = Rng::new(opts.seed);
    for _ in 0..opts.trials {
        let t = draw_trial(&mut rng, opts.points)?;
        let h = STEP_PER_SIGMA * t.soft.sigma;
        let (spec, soft, sun, w) = (&t.spec, &t.soft, &t.sun, &t.weights);

        let mut g = soft_silhouette_backward(&t.cloud, spec, soft, w)?;
        if opts.corrupt {
            for d in &mut g.d_positions {
                d.x = d.x * 1.05 + 1e-4;
            }
        }
        check_gradient(&t.cloud, &g, h, |c| Ok(weighted_sum(&soft_silhouette(c, spec, soft)?, w)), &mut reports[0])?;

        let g = soft_dsm_backward(&t.cloud, spec, soft, w)?;
        check_gradient(&t.cloud, &g, h, |c| Ok(weighted_sum(&soft_dsm(c, spec, soft)?, w)), &mut reports[1])?;

        let g = soft_shadow_backward(&t.cloud, sun, spec, soft, w)?;
        check_gradient(&t.cloud, &g, h, |c| Ok(weighted_sum(&soft_shadow(c, sun, spec, soft)?, w)), &mut reports[2])?;

        let g = chamfer(&t.cloud, &t.other)?.grad_a;
        check_gradient(&t.cloud, &g, h, |c| chamfer_value(c, &t.other), &mut reports[3])?;

        // Combined objective against random targets with every term active.
        let sil_target = Grid::from_values(
            *spec,
            (0..spec.len()).map(|_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 }).collect(),
        )?;
        let shadow_target = Grid::from_values(
            *spec,
            (0..spec.len()).map(|_| if rng.next_f64() < 0.3 { 1.0 } else { 0.0 }).collect(),
        )?;
        let dsm_target = Grid::from_values(*spec, (0..spec.len()).map(|_| rng.uniform(0.0, 2.0)).collect())?;
        let problem = LossProblem {
            targets: Targets {
                silhouette: Some(&sil_target),
                shadow: Some(&shadow_target),
                dsm: Some(&dsm_target),
                gt_cloud: Some(&t.other),
            },
            sun: Some(*sun),
            spec: *spec,
            soft: *soft,
            weights: LossWeights {
                lambda_geo: rng.uniform(0.1, 2.0),
                lambda_sil: rng.uniform(0.1, 2.0),
                lambda_shadow: rng.uniform(0.1, 2.0),
                lambda_dsm: rng.uniform(0.1, 2.0),
            },
            h_norm: rng.uniform(1.0, 10.0),
        };
        let g = combined_loss(&t.cloud, &problem)?.grad;
        check_gradient(&t.cloud, &g, h, |c| Ok(combined_value(c, &problem)?.0), &mut reports[4])?;
    }
    Ok(GradcheckReport {
        trials: opts.trials,
        families: reports,
    })
}
