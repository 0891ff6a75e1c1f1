//! Soft rasterisers with analytic gradients with respect to point positions.
//!
//! Every point is an isotropic Gaussian splat in the xy plane,
//! `g = exp(-d² / 2σ²)`, truncated to zero beyond `trunc·σ`. Three images are
//! built from the splats:
//!
//! * silhouette: soft-or occupancy `O = 1 - Π (1 - α g_i)`;
//! * DSM: soft-max height `H = Σ w_i z_i / (Σ w_i + ε)` with `w_i = g_i e^{β z_i}`,
//!   where `ε` acts as a virtual ground sample at height 0;
//! * shadow: the silhouette of the points projected to the ground along the
//!   sun direction.
//!
//! Per-pixel point lists are gathered through a pixel-bucket index, so a
//! render costs `O(N + P·k²)` with `k = ⌈trunc·σ / pixel_size⌉`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Grid, GridSpec, PointCloud, SunConfig, Vec3};

/// Leave-one-out products are recomputed directly below this factor.
const LOO_DIRECT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftConfig {
    /// Gaussian bandwidth in meters.
    pub sigma: f64,
    /// Peak opacity of one splat.
    pub alpha: f64,
    /// Soft-max height temperature in 1/m.
    pub beta: f64,
    /// Influence cutoff in units of `sigma`; may be infinite.
    pub trunc: f64,
    /// Weight of the virtual ground sample in the soft DSM.
    pub eps_ground: f64,
}

impl SoftConfig {
    /// Defaults for a raster of the given resolution: σ equal to one pixel.
    pub fn for_pixel_size(pixel_size: f64) -> Self {
        Self {
            sigma: pixel_size,
            alpha: 0.9,
            beta: 2.0,
            trunc: 3.0,
            eps_ground: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} must lie in (0, 1]", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if !(self.trunc >= 1.0) {
            return bad(format!("trunc {} must be at least 1", self.trunc));
        }
        if !(self.eps_ground > 0.0 && self.eps_ground.is_finite()) {
            return bad(format!("eps_ground {} must be positive", self.eps_ground));
        }
        Ok(())
    }
}

/// Per-point gradient `∂L/∂(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub d_positions: Vec<Vec3>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_positions: vec![Vec3::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_positions.is_empty()
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &GradBuffer, s: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.d_positions.iter_mut().zip(&other.d_positions) {
            *a += *b * s;
        }
    }

    pub fn scaled(&self, s: f64) -> GradBuffer {
        GradBuffer {
            d_positions: self.d_positions.iter().map(|g| *g * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.d_positions
            .iter()
            .flat_map(|g| g.to_array())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.d_positions.iter().all(|g| g.is_finite())
    }
}

/// One (pixel, point) interaction within the truncation radius.
#[derive(Debug, Clone, Copy)]
struct Pair {
    point: u32,
    g: f64,
    /// `x_i - c_x`
    dx: f64,
    /// `y_i - c_y`
    dy: f64,
}

/// Splat kernels gathered per pixel, in row-major pixel order.
///
/// Built once from the 2D splat centers and reused by every forward and
/// backward pass over the same positions.
#[derive(Debug, Clone)]
pub struct Splats {
    spec: GridSpec,
    cfg: SoftConfig,
    n_points: usize,
    offsets: Vec<usize>,
    pairs: Vec<Pair>,
}

impl Splats {
    pub fn build(xy: &[(f64, f64)], spec: &GridSpec, cfg: &SoftConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let cutoff = cfg.trunc * cfg.sigma;
        let cutoff_sq = cutoff * cutoff;
        let inv_two_var = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
        let reach = (cutoff / spec.pixel_size).ceil();
        let dense = !(reach < spec.width.max(spec.height) as f64);

        let index = if dense { None } else { Some(Buckets::new(xy, spec, reach as usize)) };

        let rows: Vec<(Vec<Pair>, Vec<usize>)> = (0..spec.height)
            .into_par_iter()
            .map(|pv| {
                let mut pairs = Vec::new();
                let mut counts = Vec::with_capacity(spec.width);
                for pu in 0..spec.width {
                    let before = pairs.len();
                    let (cx, cy) = spec.pixel_to_world(pu, pv);
                    let mut visit = |i: usize| {
                        let (x, y) = xy[i];
                        let (dx, dy) = (x - cx, y - cy);
                        let d2 = dx * dx + dy * dy;
                        if d2 <= cutoff_sq {
                            let g = (-d2 * inv_two_var).exp();
                            if g > 0.0 {
                                pairs.push(Pair {
                                    point: i as u32,
                                    g,
                                    dx,
                                    dy,
                                });
                            }
                        }
                    };
                    match &index {
                        Some(b) => b.for_each_near(pu, pv, &mut visit),
                        None => (0..xy.len()).for_each(&mut visit),
                    }
                    counts.push(pairs.len() - before);
                }
                (pairs, counts)
            })
            .collect();

        let mut offsets = Vec::with_capacity(spec.len() + 1);
        offsets.push(0);
        let total: usize = rows.iter().map(|(p, _)| p.len()).sum();
        let mut pairs = Vec::with_capacity(total);
        for (row_pairs, counts) in rows {
            for c in counts {
                offsets.push(offsets.last().unwrap() + c);
            }
            pairs.extend(row_pairs);
        }
        Ok(Self {
            spec: *spec,
            cfg: *cfg,
            n_points: xy.len(),
            offsets,
            pairs,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Total number of (pixel, point) interactions.
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    fn pixel(&self, i: usize) -> &[Pair] {
        &self.pairs[self.offsets[i]..self.offsets[i + 1]]
    }

    fn check_d_pixels(&self, d_pixels: &Grid) -> Result<()> {
        self.spec.ensure_same(&d_pixels.spec)?;
        if d_pixels.values.len() != self.spec.len() {
            return Err(Error::SpecMismatch("gradient grid has wrong length".into()));
        }
        Ok(())
    }

    /// Soft-or occupancy per pixel.
    pub fn silhouette(&self) -> Grid {
        let alpha = self.cfg.alpha;
        let values = (0..self.spec.len())
            .into_par_iter()
            .map(|i| {
                let transmit: f64 = self.pixel(i).iter().map(|p| 1.0 - alpha * p.g).product();
                1.0 - transmit
            })
            .collect();
        Grid {
            spec: self.spec,
            values,
        }
    }

    /// Gradient of `Σ_u d_pixels(u) · O(u)` with respect to the splat centers.
    pub fn silhouette_backward(&self, d_pixels: &Grid) -> Result<Vec<[f64; 2]>> {
        self.check_d_pixels(d_pixels)?;
        let alpha = self.cfg.alpha;
        let inv_var = 1.0 / (self.cfg.sigma * self.cfg.sigma);
        let mut grad = vec![[0.0; 2]; self.n_points];
        for (i, &dl) in d_pixels.values.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let pairs = self.pixel(i);
            let transmit: f64 = pairs.iter().map(|p| 1.0 - alpha * p.g).product();
            for (k, p) in pairs.iter().enumerate() {
                let own = 1.0 - alpha * p.g;
                let others = if own < LOO_DIRECT_THRESHOLD {
                    pairs
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, q)| 1.0 - alpha * q.g)
                        .product()
                } else {
                    transmit / own
                };
                // dO/dg = α·Π_{j≠i}(1 - α g_j); dg/dx = -g (x - c_x) / σ²
                let s = dl * alpha * others * (-p.g * inv_var);
                let gp = &mut grad[p.point as usize];
                gp[0] += s * p.dx;
                gp[1] += s * p.dy;
            }
        }
        Ok(grad)
    }

    /// Soft-max height per pixel for point heights `z`.
    pub fn dsm(&self, z: &[f64]) -> Grid {
        debug_assert_eq!(z.len(), self.n_points);
        let values = (0..self.spec.len())
            .into_par_iter()
            .map(|i| match self.dsm_pixel(self.pixel(i), z) {
                Some(px) => px.height,
                None => 0.0,
            })
            .collect();
        Grid {
            spec: self.spec,
            values,
        }
    }

    /// Gradient of `Σ_u d_pixels(u) · H(u)` with respect to the 3D positions.
    pub fn dsm_backward(&self, z: &[f64], d_pixels: &Grid) -> Result<Vec<[f64; 3]>> {
        self.check_d_pixels(d_pixels)?;
        let beta = self.cfg.beta;
        let inv_var = 1.0 / (self.cfg.sigma * self.cfg.sigma);
        let mut grad = vec![[0.0; 3]; self.n_points];
        for (i, &dl) in d_pixels.values.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let pairs = self.pixel(i);
            let Some(px) = self.dsm_pixel(pairs, z) else {
                continue;
            };
            for p in pairs {
                let zi = z[p.point as usize];
                let w = p.g * (beta * (zi - px.z_ref)).exp();
                // ∂H/∂w_i = (z_i - H)/D, ∂w/∂z = β w, ∂w/∂x = -w (x - c_x)/σ²
                let dh_dw = (zi - px.height) / px.denom;
                let gp = &mut grad[p.point as usize];
                gp[0] += dl * dh_dw * w * (-p.dx * inv_var);
                gp[1] += dl * dh_dw * w * (-p.dy * inv_var);
                gp[2] += dl * (w / px.denom + dh_dw * beta * w);
            }
        }
        Ok(grad)
    }

    /// Soft-max height of one pixel, with weights rescaled by `e^{-β z_ref}`
    /// (`z_ref` = highest contributing point) so the exponentials cannot overflow.
    fn dsm_pixel(&self, pairs: &[Pair], z: &[f64]) -> Option<DsmPixel> {
        if pairs.is_empty() {
            return None;
        }
        let beta = self.cfg.beta;
        let z_ref = pairs
            .iter()
            .map(|p| z[p.point as usize])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for p in pairs {
            let zi = z[p.point as usize];
            let w = p.g * (beta * (zi - z_ref)).exp();
            num += w * zi;
            den += w;
        }
        let denom = den + self.cfg.eps_ground * (-beta * z_ref).exp();
        Some(DsmPixel {
            z_ref,
            denom,
            height: num / denom,
        })
    }
}

struct DsmPixel {
    z_ref: f64,
    denom: f64,
    height: f64,
}

/// Points bucketed by nearest pixel on a grid padded by `reach` pixels.
struct Buckets {
    reach: usize,
    ext_w: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn new(xy: &[(f64, f64)], spec: &GridSpec, reach: usize) -> Self {
        let ext_w = spec.width + 2 * reach;
        let ext_h = spec.height + 2 * reach;
        let cell_of = |&(x, y): &(f64, f64)| -> Option<usize> {
            let (u, v) = spec.xy_to_pixel(x, y);
            let cu = u.round() + reach as f64;
            let cv = v.round() + reach as f64;
            if cu >= 0.0 && cv >= 0.0 && cu < ext_w as f64 && cv < ext_h as f64 {
                Some(cv as usize * ext_w + cu as usize)
            } else {
                None
            }
        };
        let cells: Vec<Option<usize>> = xy.iter().map(cell_of).collect();
        let mut start = vec![0usize; ext_w * ext_h + 1];
        for c in cells.iter().flatten() {
            start[c + 1] += 1;
        }
        for i in 1..start.len() {
            start[i] += start[i - 1];
        }
        let mut fill = start.clone();
        let mut items = vec![0usize; start[start.len() - 1]];
        for (i, c) in cells.iter().enumerate() {
            if let Some(c) = *c {
                items[fill[c]] = i;
                fill[c] += 1;
            }
        }
        Self {
            reach,
            ext_w,
            start,
            items,
        }
    }

    /// Visits every point bucketed within `reach` pixels of pixel `(pu, pv)`.
    fn for_each_near(&self, pu: usize, pv: usize, f: &mut impl FnMut(usize)) {
        // Extended coordinates of the neighbourhood are [p, p + 2·reach].
        for cv in pv..=pv + 2 * self.reach {
            let row = cv * self.ext_w;
            let lo = self.start[row + pu];
            let hi = self.start[row + pu + 2 * self.reach + 1];
            for &i in &self.items[lo..hi] {
                f(i);
            }
        }
    }
}

fn xy_of(cloud: &PointCloud) -> Vec<(f64, f64)> {
    cloud.positions.iter().map(|p| (p.x, p.y)).collect()
}

fn z_of(cloud: &PointCloud) -> Vec<f64> {
    cloud.positions.iter().map(|p| p.z).collect()
}

pub fn soft_silhouette(cloud: &PointCloud, spec: &GridSpec, cfg: &SoftConfig) -> Result<Grid> {
    Ok(Splats::build(&xy_of(cloud), spec, cfg)?.silhouette())
}

pub fn soft_silhouette_backward(
    cloud: &PointCloud,
    spec: &GridSpec,
    cfg: &SoftConfig,
    d_pixels: &Grid,
) -> Result<GradBuffer> {
    let g = Splats::build(&xy_of(cloud), spec, cfg)?.silhouette_backward(d_pixels)?;
    Ok(GradBuffer {
        d_positions: g.into_iter().map(|[x, y]| Vec3::new(x, y, 0.0)).collect(),
    })
}

pub fn soft_dsm(cloud: &PointCloud, spec: &GridSpec, cfg: &SoftConfig) -> Result<Grid> {
    Ok(Splats::build(&xy_of(cloud), spec, cfg)?.dsm(&z_of(cloud)))
}

pub fn soft_dsm_backward(
    cloud: &PointCloud,
    spec: &GridSpec,
    cfg: &SoftConfig,
    d_pixels: &Grid,
) -> Result<GradBuffer> {
    let g = Splats::build(&xy_of(cloud), spec, cfg)?.dsm_backward(&z_of(cloud), d_pixels)?;
    Ok(GradBuffer {
        d_positions: g.into_iter().map(Vec3::from_array).collect(),
    })
}

/// Ground shadows of a point set plus the (constant) Jacobian of the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundProjection {
    pub shadow_xy: Vec<(f64, f64)>,
    /// Rows `∂s_x/∂(x,y,z)` and `∂s_y/∂(x,y,z)`; identical for every point.
    pub jacobian: [[f64; 3]; 2],
}

impl GroundProjection {
    /// Pulls a gradient with respect to shadow positions back to 3D positions.
    pub fn pull_back(&self, d_shadow: &[[f64; 2]]) -> GradBuffer {
        let j = self.jacobian;
        GradBuffer {
            d_positions: d_shadow
                .iter()
                .map(|&[gx, gy]| {
                    Vec3::new(
                        gx * j[0][0] + gy * j[1][0],
                        gx * j[0][1] + gy * j[1][1],
                        gx * j[0][2] + gy * j[1][2],
                    )
                })
                .collect(),
        }
    }
}

pub fn project_to_ground(cloud: &PointCloud, sun: &SunConfig) -> Result<GroundProjection> {
    let (a, b) = sun.shadow_offset()?;
    Ok(GroundProjection {
        shadow_xy: cloud
            .positions
            .iter()
            .map(|p| (p.x - p.z * a, p.y - p.z * b))
            .collect(),
        jacobian: [[1.0, 0.0, -a], [0.0, 1.0, -b]],
    })
}

pub fn soft_shadow(cloud: &PointCloud, sun: &SunConfig, spec: &GridSpec, cfg: &SoftConfig) -> Result<Grid> {
    let proj = project_to_ground(cloud, sun)?;
    Ok(Splats::build(&proj.shadow_xy, spec, cfg)?.silhouette())
}

pub fn soft_shadow_backward(
    cloud: &PointCloud,
    sun: &SunConfig,
    spec: &GridSpec,
    cfg: &SoftConfig,
    d_pixels: &Grid,
) -> Result<GradBuffer> {
    let proj = project_to_ground(cloud, sun)?;
    let d_shadow = Splats::build(&proj.shadow_xy, spec, cfg)?.silhouette_backward(d_pixels)?;
    Ok(proj.pull_back(&d_shadow))
}
