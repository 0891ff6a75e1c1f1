//! Training losses: squared Chamfer distance, raster L2, and their weighted sum.

use crate::diffrender::{project_to_ground, GradBuffer, SoftConfig, Splats};
use crate::error::{Error, Result};
use crate::nn::NearestIndex;
use crate::types::{Grid, GridSpec, PointCloud, SunConfig, Vec3};

/// Height scale that makes the DSM term dimensionless.
pub const DEFAULT_H_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_geo: f64,
    pub lambda_sil: f64,
    pub lambda_shadow: f64,
    pub lambda_dsm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_geo: 1.0,
            lambda_sil: 1.0,
            lambda_shadow: 0.5,
            lambda_dsm: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_geo, self.lambda_sil, self.lambda_shadow, self.lambda_dsm];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!("loss weights must be non-negative: {self:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            lambda_geo: self.lambda_geo * s,
            lambda_sil: self.lambda_sil * s,
            lambda_shadow: self.lambda_shadow * s,
            lambda_dsm: self.lambda_dsm * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chamfer {
    pub value: f64,
    pub grad_a: GradBuffer,
}

/// Symmetric mean squared nearest-neighbour distance and its gradient with
/// respect to `a`. Nearest-neighbour ties go to the smallest index.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<Chamfer> {
    let (value, grad) = chamfer_impl(&a.positions, &b.positions, true)?;
    Ok(Chamfer {
        value,
        grad_a: grad.expect("gradient requested"),
    })
}

/// Chamfer value only.
pub fn chamfer_value(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(chamfer_impl(&a.positions, &b.positions, false)?.0)
}

fn chamfer_impl(a: &[Vec3], b: &[Vec3], with_grad: bool) -> Result<(f64, Option<GradBuffer>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let a_to_b = NearestIndex::new(b).nearest_all(a);
    let b_to_a = NearestIndex::new(a).nearest_all(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let forward: f64 = a_to_b.iter().map(|&(d, _)| d).sum::<f64>() / na;
    let backward: f64 = b_to_a.iter().map(|&(d, _)| d).sum::<f64>() / nb;
    if !with_grad {
        return Ok((forward + backward, None));
    }
    let mut grad = GradBuffer::zeros(a.len());
    for (i, &(_, j)) in a_to_b.iter().enumerate() {
        grad.d_positions[i] += (a[i] - b[j]) * (2.0 / na);
    }
    for (k, &(_, i)) in b_to_a.iter().enumerate() {
        grad.d_positions[i] += (a[i] - b[k]) * (2.0 / nb);
    }
    Ok((forward + backward, Some(grad)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterLoss {
    pub value: f64,
    pub d_pixels: Grid,
}

/// Mean squared pixel difference and its gradient with respect to `pred`.
pub fn raster_l2(pred: &Grid, target: &Grid) -> Result<RasterLoss> {
    pred.spec.ensure_same(&target.spec)?;
    if pred.values.len() != target.values.len() {
        return Err(Error::SpecMismatch("raster lengths differ".into()));
    }
    let p = pred.values.len() as f64;
    let mut sum = 0.0;
    let mut d = Vec::with_capacity(pred.values.len());
    for (x, t) in pred.values.iter().zip(&target.values) {
        let r = x - t;
        sum += r * r;
        d.push(2.0 * r / p);
    }
    Ok(RasterLoss {
        value: sum / p,
        d_pixels: Grid {
            spec: pred.spec,
            values: d,
        },
    })
}

/// Supervision for the combined objective. Only the targets whose weight is
/// positive need to be present.
#[derive(Debug, Clone, Default)]
pub struct Targets<'a> {
    pub silhouette: Option<&'a Grid>,
    pub shadow: Option<&'a Grid>,
    pub dsm: Option<&'a Grid>,
    pub gt_cloud: Option<&'a PointCloud>,
}

/// Unweighted value of every term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub geo: f64,
    pub sil: f64,
    pub shadow: f64,
    pub dsm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub grad: GradBuffer,
    pub breakdown: LossBreakdown,
}

/// Everything the combined objective needs besides the point cloud.
#[derive(Debug, Clone)]
pub struct LossProblem<'a> {
    pub targets: Targets<'a>,
    pub sun: Option<SunConfig>,
    pub spec: GridSpec,
    pub soft: SoftConfig,
    pub weights: LossWeights,
    pub h_norm: f64,
}

impl LossProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.soft.validate()?;
        self.spec.validate()?;
        if !(self.h_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("h_norm {} must be positive", self.h_norm)));
        }
        let w = &self.weights;
        let t = &self.targets;
        if w.lambda_geo > 0.0 && t.gt_cloud.is_none() {
            return Err(Error::MissingTarget("ground-truth cloud (lambda_geo > 0)"));
        }
        if w.lambda_sil > 0.0 && t.silhouette.is_none() {
            return Err(Error::MissingTarget("silhouette (lambda_sil > 0)"));
        }
        if w.lambda_dsm > 0.0 && t.dsm.is_none() {
            return Err(Error::MissingTarget("dsm (lambda_dsm > 0)"));
        }
        if w.lambda_shadow > 0.0 {
            if t.shadow.is_none() {
                return Err(Error::MissingTarget("shadow (lambda_shadow > 0)"));
            }
            match &self.sun {
                None => return Err(Error::MissingTarget("sun configuration (lambda_shadow > 0)")),
                Some(sun) => sun.validate()?,
            }
        }
        for g in [t.silhouette, t.shadow, t.dsm].into_iter().flatten() {
            self.spec.ensure_same(&g.spec)?;
        }
        Ok(())
    }

    fn dsm_scale(&self) -> f64 {
        1.0 / (self.h_norm * self.h_norm)
    }
}

/// Weighted sum of the active terms, with its gradient.
pub fn combined_loss(cloud: &PointCloud, problem: &LossProblem<'_>) -> Result<CombinedLoss> {
    evaluate(cloud, problem, true).map(|(value, breakdown, grad)| CombinedLoss {
        value,
        grad: grad.expect("gradient requested"),
        breakdown,
    })
}

/// Value and breakdown of the combined objective without the backward pass.
pub fn combined_value(cloud: &PointCloud, problem: &LossProblem<'_>) -> Result<(f64, LossBreakdown)> {
    evaluate(cloud, problem, false).map(|(v, b, _)| (v, b))
}

fn evaluate(
    cloud: &PointCloud,
    problem: &LossProblem<'_>,
    with_grad: bool,
) -> Result<(f64, LossBreakdown, Option<GradBuffer>)> {
    problem.validate()?;
    let w = &problem.weights;
    let t = &problem.targets;
    let n = cloud.len();
    let mut grad = GradBuffer::zeros(n);
    let mut br = LossBreakdown::default();

    if w.lambda_geo > 0.0 {
        let gt = t.gt_cloud.expect("validated");
        let (v, g) = chamfer_impl(&cloud.positions, &gt.positions, with_grad)?;
        br.geo = v;
        if let Some(g) = g {
            grad.add_scaled(&g, w.lambda_geo);
        }
    }

    if w.lambda_sil > 0.0 || w.lambda_dsm > 0.0 {
        let xy: Vec<(f64, f64)> = cloud.positions.iter().map(|p| (p.x, p.y)).collect();
        let splats = Splats::build(&xy, &problem.spec, &problem.soft)?;
        if w.lambda_sil > 0.0 {
            let l = raster_l2(&splats.silhouette(), t.silhouette.expect("validated"))?;
            br.sil = l.value;
            if with_grad {
                let g = splats.silhouette_backward(&l.d_pixels)?;
                for (acc, [gx, gy]) in grad.d_positions.iter_mut().zip(g) {
                    acc.x += w.lambda_sil * gx;
                    acc.y += w.lambda_sil * gy;
                }
            }
        }
        if w.lambda_dsm > 0.0 {
            let z: Vec<f64> = cloud.positions.iter().map(|p| p.z).collect();
            let l = raster_l2(&splats.dsm(&z), t.dsm.expect("validated"))?;
            let s = problem.dsm_scale();
            br.dsm = l.value * s;
            if with_grad {
                let g = splats.dsm_backward(&z, &l.d_pixels)?;
                let k = w.lambda_dsm * s;
                for (acc, gi) in grad.d_positions.iter_mut().zip(g) {
                    *acc += Vec3::from_array(gi) * k;
                }
            }
        }
    }

    if w.lambda_shadow > 0.0 {
        let sun = problem.sun.as_ref().expect("validated");
        let proj = project_to_ground(cloud, sun)?;
        let splats = Splats::build(&proj.shadow_xy, &problem.spec, &problem.soft)?;
        let l = raster_l2(&splats.silhouette(), t.shadow.expect("validated"))?;
        br.shadow = l.value;
        if with_grad {
            let g = proj.pull_back(&splats.silhouette_backward(&l.d_pixels)?);
            grad.add_scaled(&g, w.lambda_shadow);
        }
    }

    let value = w.lambda_geo * br.geo
        + w.lambda_sil * br.sil
        + w.lambda_shadow * br.shadow
        + w.lambda_dsm * br.dsm;
    Ok((value, br, with_grad.then_some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::from_positions(points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    #[test]
    fn chamfer_examples() {
        let a = pc(&[(0.0, 0.0, 0.0), (1.0, 2.0, 3.0)]);
        let c = chamfer(&a, &a).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.grad_a.max_abs(), 0.0);

        let c = chamfer(&pc(&[(0.0, 0.0, 0.0)]), &pc(&[(1.0, 0.0, 0.0)])).unwrap();
        assert_eq!(c.value, 2.0);
        assert_eq!(c.grad_a.d_positions[0], Vec3::new(-4.0, 0.0, 0.0));
    }

    #[test]
    fn chamfer_rejects_empty() {
        let a = pc(&[(0.0, 0.0, 0.0)]);
        assert!(matches!(chamfer(&a, &PointCloud::default()), Err(Error::EmptyCloud)));
        assert!(matches!(chamfer(&PointCloud::default(), &a), Err(Error::EmptyCloud)));
    }

    #[test]
    fn raster_l2_examples() {
        let s1 = GridSpec::new(1, 1, 0.0, 0.0, 1.0).unwrap();
        let l = raster_l2(&Grid::filled(s1, 1.0), &Grid::zeros(s1)).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.d_pixels.values, vec![2.0]);

        let s2 = GridSpec::new(2, 1, 0.0, 0.0, 1.0).unwrap();
        let pred = Grid::from_values(s2, vec![1.0, 0.0]).unwrap();
        let l = raster_l2(&pred, &Grid::zeros(s2)).unwrap();
        assert_eq!(l.value, 0.5);
        assert_eq!(l.d_pixels.values, vec![1.0, 0.0]);

        let l = raster_l2(&pred, &pred).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.d_pixels.values.iter().all(|&v| v == 0.0));

        assert!(matches!(raster_l2(&pred, &Grid::zeros(s1)), Err(Error::SpecMismatch(_))));
    }

    fn problem<'a>(targets: Targets<'a>, weights: LossWeights, spec: GridSpec) -> LossProblem<'a> {
        LossProblem {
            targets,
            sun: Some(SunConfig::new(135.0, 50.0).unwrap()),
            spec,
            soft: SoftConfig::for_pixel_size(spec.pixel_size),
            weights,
            h_norm: DEFAULT_H_NORM,
        }
    }

    #[test]
    fn silhouette_only_at_its_own_target_is_zero() {
        let spec = GridSpec::centered(12, 12, 0.5).unwrap();
        let cloud = pc(&[(0.3, -0.2, 2.0), (1.0, 1.0, 3.0)]);
        let sil = crate::diffrender::soft_silhouette(&cloud, &spec, &SoftConfig::for_pixel_size(0.5)).unwrap();
        let w = LossWeights {
            lambda_geo: 0.0,
            lambda_sil: 1.0,
            lambda_shadow: 0.0,
            lambda_dsm: 0.0,
        };
        let p = problem(
            Targets {
                silhouette: Some(&sil),
                ..Targets::default()
            },
            w,
            spec,
        );
        let l = combined_loss(&cloud, &p).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grad.max_abs(), 0.0);
    }

    #[test]
    fn missing_targets_are_reported() {
        let spec = GridSpec::centered(4, 4, 0.5).unwrap();
        let cloud = pc(&[(0.0, 0.0, 1.0)]);
        let sil = Grid::zeros(spec);
        let mut p = problem(
            Targets {
                silhouette: Some(&sil),
                dsm: Some(&sil),
                ..Targets::default()
            },
            LossWeights::default(),
            spec,
        );
        assert!(matches!(combined_loss(&cloud, &p), Err(Error::MissingTarget(_))));
        p.weights.lambda_geo = 0.0;
        assert!(matches!(combined_loss(&cloud, &p), Err(Error::MissingTarget(_))));
        p.weights.lambda_shadow = 0.0;
        assert!(combined_loss(&cloud, &p).is_ok());

        let other = Grid::zeros(GridSpec::centered(5, 4, 0.5).unwrap());
        p.targets.dsm = Some(&other);
        assert!(matches!(combined_loss(&cloud, &p), Err(Error::SpecMismatch(_))));
    }
}
