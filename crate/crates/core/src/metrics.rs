//! Reconstruction quality (Chamfer) and coverage (F-score at a distance
//! threshold), plus the DSM extrusion baseline they are compared against.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses;
use crate::nn::NearestIndex;
use crate::reconstruct::FootprintSampler;
use crate::rng::Rng;
use crate::types::{Grid, PointCloud, RgbGrid, Vec3};

/// Default matching distance in meters.
pub const DEFAULT_TAU: f64 = 0.5;

pub fn eval_chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    losses::chamfer_value(pred, gt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn matched_fraction(from: &[Vec3], to: &[Vec3], tau: f64) -> f64 {
    let hits = NearestIndex::new(to)
        .nearest_all(from)
        .into_iter()
        .filter(|&(d, _)| d.sqrt() <= tau)
        .count();
    hits as f64 / from.len() as f64
}

pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau {tau} must be positive")));
    }
    let precision = matched_fraction(&pred.positions, &gt.positions, tau);
    let recall = matched_fraction(&gt.positions, &pred.positions, tau);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore { precision, recall, f })
}

/// Points on the DSM canopy surface only: pixel drawn proportionally to the
/// silhouette, (x, y) jittered inside it, `z` equal to the pixel height.
/// Draw order per point: pixel, x jitter, y jitter.
pub fn baseline_extrude(
    dsm: &Grid,
    silhouette: &Grid,
    ortho: &RgbGrid,
    n_points: usize,
    rng: &mut Rng,
) -> Result<PointCloud> {
    dsm.spec.ensure_same(&silhouette.spec)?;
    dsm.spec.ensure_same(&ortho.spec)?;
    let sampler = FootprintSampler::new(silhouette)?;
    let spec = dsm.spec;
    let mut positions = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let i = sampler.draw(rng);
        let (cx, cy) = spec.pixel_to_world(i % spec.width, i / spec.width);
        let x = cx + (rng.next_f64() - 0.5) * spec.pixel_size;
        let y = cy + (rng.next_f64() - 0.5) * spec.pixel_size;
        positions.push(Vec3::new(x, y, dsm.values[i]));
        colors.push(ortho.values[i]);
    }
    Ok(PointCloud {
        positions,
        colors: Some(colors),
        classes: None,
    })
}

/// One-line evaluation report:
/// `chamfer=<v> precision=<p> recall=<r> fscore=<f> tau=<t>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub tau: f64,
}

impl EvalReport {
    pub fn compute(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<Self> {
        let chamfer = eval_chamfer(pred, gt)?;
        let f = fscore(pred, gt, tau)?;
        Ok(Self {
            chamfer,
            precision: f.precision,
            recall: f.recall,
            fscore: f.f,
            tau,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chamfer={} precision={} recall={} fscore={} tau={}",
            self.chamfer, self.precision, self.recall, self.fscore, self.tau
        )
    }
}

impl FromStr for EvalReport {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut fields = [None; 5];
        const KEYS: [&str; 5] = ["chamfer", "precision", "recall", "fscore", "tau"];
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("token `{tok}` is not key=value"))?;
            let slot = KEYS.iter().position(|&key| key == k).ok_or_else(|| format!("unknown key `{k}`"))?;
            fields[slot] = Some(v.parse::<f64>().map_err(|e| format!("{k}: {e}"))?);
        }
        let get = |i: usize| fields[i].ok_or_else(|| format!("missing key `{}`", KEYS[i]));
        Ok(Self {
            chamfer: get(0)?,
            precision: get(1)?,
            recall: get(2)?,
            fscore: get(3)?,
            tau: get(4)?,
        })
    }
}
