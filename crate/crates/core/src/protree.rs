//! Procedural tree generator for synthetic ground truth.
//!
//! A tree is grown by recursive axial rotation: the trunk is a vertical
//! segment, and every segment below the maximum depth spawns a few children
//! that are shorter, thinner, and tilted away from their parent by a random
//! angle around a random azimuth. Bark points are sampled on segment surfaces,
//! foliage points inside spheres around the terminal tips.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sensor;
use crate::types::{Grid, GridSpec, PointClass, PointCloud, Rgb, RgbGrid, SunConfig, Vec3};

pub const TRUNK_COLOR: Rgb = [0.35, 0.23, 0.12];
pub const FOLIAGE_COLOR: Rgb = [0.15, 0.45, 0.15];
pub const COLOR_JITTER: f64 = 0.08;

/// Version tag written into scene manifests.
pub const GENERATOR_VERSION: &str = concat!("arbor-protree/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub trunk_height: f64,
    pub trunk_radius: f64,
    pub branch_depth: u32,
    /// Inclusive range for the number of children spawned per segment.
    pub children_per_branch: (u32, u32),
    pub length_decay: f64,
    pub radius_decay: f64,
    /// Inclusive range for the tilt of a child relative to its parent.
    pub branch_angle_deg: (f64, f64),
    pub crown_radius: f64,
    pub foliage_fraction: f64,
    pub n_points: usize,
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.trunk_height > 0.0 && self.trunk_height.is_finite()) {
            return bad(format!("trunk_height {} must be positive", self.trunk_height));
        }
        if !(self.trunk_radius > 0.0 && self.trunk_radius.is_finite()) {
            return bad(format!("trunk_radius {} must be positive", self.trunk_radius));
        }
        let (cmin, cmax) = self.children_per_branch;
        if cmin > cmax {
            return bad(format!("children_per_branch range [{cmin}, {cmax}] is empty"));
        }
        for (name, v) in [("length_decay", self.length_decay), ("radius_decay", self.radius_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} must lie strictly in (0, 1)"));
            }
        }
        let (amin, amax) = self.branch_angle_deg;
        if !(amin <= amax && amin.is_finite() && amax.is_finite()) {
            return bad(format!("branch_angle_deg range [{amin}, {amax}] is empty"));
        }
        if !(self.crown_radius >= 0.0 && self.crown_radius.is_finite()) {
            return bad(format!("crown_radius {} must be non-negative", self.crown_radius));
        }
        if !(0.0..=1.0).contains(&self.foliage_fraction) {
            return bad(format!("foliage_fraction {} outside [0, 1]", self.foliage_fraction));
        }
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T> Range<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }
}

impl<T: Copy> Range<T> {
    pub const fn fixed(v: T) -> Self {
        Self { lo: v, hi: v }
    }
}

/// Species-agnostic sampling ranges for [`TreeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRanges {
    pub trunk_height: Range<f64>,
    pub trunk_radius: Range<f64>,
    pub branch_depth: Range<u32>,
    pub children_per_branch: Range<u32>,
    pub length_decay: Range<f64>,
    pub radius_decay: Range<f64>,
    pub branch_angle_deg: Range<f64>,
    pub crown_radius: Range<f64>,
    pub foliage_fraction: Range<f64>,
    pub n_points: Range<usize>,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            trunk_height: Range::new(2.0, 5.0),
            trunk_radius: Range::new(0.15, 0.4),
            branch_depth: Range::new(1, 2),
            children_per_branch: Range::new(2, 3),
            length_decay: Range::new(0.4, 0.6),
            radius_decay: Range::new(0.5, 0.7),
            branch_angle_deg: Range::new(20.0, 45.0),
            crown_radius: Range::new(1.5, 2.5),
            foliage_fraction: Range::new(0.8, 0.95),
            n_points: Range::fixed(2000),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialOrd + std::fmt::Debug>(name: &str, r: &Range<T>) -> Result<()> {
            if r.lo <= r.hi {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "range {name} [{:?}, {:?}] is empty",
                    r.lo, r.hi
                )))
            }
        }
        check("trunk_height", &self.trunk_height)?;
        check("trunk_radius", &self.trunk_radius)?;
        check("branch_depth", &self.branch_depth)?;
        check("children_per_branch", &self.children_per_branch)?;
        check("length_decay", &self.length_decay)?;
        check("radius_decay", &self.radius_decay)?;
        check("branch_angle_deg", &self.branch_angle_deg)?;
        check("crown_radius", &self.crown_radius)?;
        check("foliage_fraction", &self.foliage_fraction)?;
        check("n_points", &self.n_points)?;
        Ok(())
    }
}

/// Draws tree parameters. Draw order: trunk_height, trunk_radius,
/// branch_depth, length_decay, radius_decay, crown_radius, foliage_fraction,
/// n_points. The two range-valued fields are copied through and sampled
/// per segment during growth.
pub fn sample_params(rng: &mut Rng, ranges: &ParamRanges) -> Result<TreeParams> {
    ranges.validate()?;
    let u = |rng: &mut Rng, r: Range<f64>| rng.uniform(r.lo, r.hi);
    let trunk_height = u(rng, ranges.trunk_height);
    let trunk_radius = u(rng, ranges.trunk_radius);
    let branch_depth =
        rng.int_inclusive(ranges.branch_depth.lo as u64, ranges.branch_depth.hi as u64) as u32;
    let length_decay = u(rng, ranges.length_decay);
    let radius_decay = u(rng, ranges.radius_decay);
    let crown_radius = u(rng, ranges.crown_radius);
    let foliage_fraction = u(rng, ranges.foliage_fraction);
    let n_points = rng.int_inclusive(ranges.n_points.lo as u64, ranges.n_points.hi as u64) as usize;
    let params = TreeParams {
        trunk_height,
        trunk_radius,
        branch_depth,
        children_per_branch: (ranges.children_per_branch.lo, ranges.children_per_branch.hi),
        length_decay,
        radius_decay,
        branch_angle_deg: (ranges.branch_angle_deg.lo, ranges.branch_angle_deg.hi),
        crown_radius,
        foliage_fraction,
        n_points,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
    pub depth: u32,
    pub parent: Option<usize>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Vec3 {
        (self.end - self.start).normalized()
    }
}

/// Branch segments in depth-first pre-order; segment 0 is the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub segments: Vec<Segment>,
}

impl Skeleton {
    /// Indices of segments without children.
    pub fn terminals(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.segments.len()];
        for s in &self.segments {
            if let Some(p) = s.parent {
                has_child[p] = true;
            }
        }
        (0..self.segments.len()).filter(|&i| !has_child[i]).collect()
    }
}

/// Two unit vectors orthogonal to `d` and to each other.
fn orthonormal_basis(d: Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = d.cross(helper).normalized();
    let e2 = d.cross(e1);
    (e1, e2)
}

/// Grows the branch skeleton. For each spawning segment the draws are: child
/// count, then per child (tilt angle, azimuth), before recursing into the
/// children in order.
pub fn grow_skeleton(params: &TreeParams, rng: &mut Rng) -> Result<Skeleton> {
    params.validate()?;
    let mut segments = vec![Segment {
        start: Vec3::ZERO,
        end: Vec3::new(0.0, 0.0, params.trunk_height),
        radius: params.trunk_radius,
        depth: 0,
        parent: None,
    }];
    grow_children(0, params, rng, &mut segments);
    Ok(Skeleton { segments })
}

fn grow_children(parent: usize, params: &TreeParams, rng: &mut Rng, out: &mut Vec<Segment>) {
    let p = out[parent].clone();
    if p.depth >= params.branch_depth {
        return;
    }
    let (cmin, cmax) = params.children_per_branch;
    let k = rng.int_inclusive(cmin as u64, cmax as u64);
    let dir = p.direction();
    let (e1, e2) = orthonormal_basis(dir);
    let length = p.length() * params.length_decay;
    let radius = p.radius * params.radius_decay;

    let mut children = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let tilt = rng
            .uniform(params.branch_angle_deg.0, params.branch_angle_deg.1)
            .to_radians();
        let azimuth = rng.uniform(0.0, std::f64::consts::TAU);
        let (sa, ca) = azimuth.sin_cos();
        let (st, ct) = tilt.sin_cos();
        let child_dir = (dir * ct + (e1 * ca + e2 * sa) * st).normalized();
        children.push(Segment {
            start: p.end,
            end: p.end + child_dir * length,
            radius,
            depth: p.depth + 1,
            parent: Some(parent),
        });
    }
    for child in children {
        out.push(child);
        let idx = out.len() - 1;
        grow_children(idx, params, rng, out);
    }
}

fn jittered(base: Rgb, rng: &mut Rng) -> Rgb {
    let mut c = base;
    for ch in &mut c {
        *ch = (*ch + rng.uniform(-COLOR_JITTER, COLOR_JITTER)).clamp(0.0, 1.0);
    }
    c
}

/// Samples the labelled point cloud.
///
/// `round(n_points * (1 - foliage_fraction))` bark points go on segment
/// surfaces (segment chosen proportionally to lateral area); the rest are
/// uniform inside spheres of `crown_radius` around terminal tips. Points below
/// ground are clamped to z = 0.
pub fn sample_cloud(skeleton: &Skeleton, params: &TreeParams, rng: &mut Rng) -> Result<PointCloud> {
    params.validate()?;
    if skeleton.segments.is_empty() {
        return Err(Error::InvalidConfig("skeleton has no segments".into()));
    }
    let n = params.n_points;
    let n_trunk = ((n as f64) * (1.0 - params.foliage_fraction)).round() as usize;
    let n_trunk = n_trunk.min(n);

    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);

    // Cumulative lateral area for surface-proportional segment selection.
    let mut cumulative = Vec::with_capacity(skeleton.segments.len());
    let mut total = 0.0;
    for s in &skeleton.segments {
        total += s.radius * s.length();
        cumulative.push(total);
    }
    let bases: Vec<(Vec3, Vec3)> = skeleton
        .segments
        .iter()
        .map(|s| orthonormal_basis(s.direction()))
        .collect();

    for _ in 0..n_trunk {
        let target = rng.next_f64() * total;
        let si = cumulative
            .partition_point(|&c| c <= target)
            .min(skeleton.segments.len() - 1);
        let s = &skeleton.segments[si];
        let t = rng.next_f64();
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let (e1, e2) = bases[si];
        let axis = s.start + (s.end - s.start) * t;
        let mut p = axis + (e1 * angle.cos() + e2 * angle.sin()) * s.radius;
        p.z = p.z.max(0.0);
        positions.push(p);
        colors.push(jittered(TRUNK_COLOR, rng));
        classes.push(PointClass::Trunk);
    }

    let terminals = skeleton.terminals();
    for _ in n_trunk..n {
        let tip = skeleton.segments[terminals[rng.index(terminals.len())]].end;
        let offset = loop {
            let o = Vec3::new(
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
            );
            if o.norm_sq() <= 1.0 {
                break o;
            }
        };
        let mut p = tip + offset * params.crown_radius;
        p.z = p.z.max(0.0);
        positions.push(p);
        colors.push(jittered(FOLIAGE_COLOR, rng));
        classes.push(PointClass::Foliage);
    }

    Ok(PointCloud {
        positions,
        colors: Some(colors),
        classes: Some(classes),
    })
}

/// Everything needed to synthesise one scene besides its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub ranges: ParamRanges,
    pub grid: GridSpec,
    pub sun: SunConfig,
    /// Disk radius of the hard sensor renderer.
    pub splat_radius: f64,
    /// Height threshold for the silhouette raster.
    pub h_min: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ranges: ParamRanges::default(),
            grid: GridSpec::centered(128, 128, 0.25).expect("valid default grid"),
            sun: SunConfig {
                azimuth_deg: 135.0,
                elevation_deg: 55.0,
            },
            splat_radius: sensor::DEFAULT_SPLAT_RADIUS,
            h_min: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    pub cloud: PointCloud,
    pub ortho: RgbGrid,
    pub dsm: Grid,
    pub silhouette: Grid,
    pub shadow: Grid,
    pub sun: SunConfig,
    pub grid: GridSpec,
}

/// Generates a full synthetic scene; a pure function of `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.grid.validate()?;
    cfg.sun.validate()?;
    let mut rng = Rng::new(seed);
    let params = sample_params(&mut rng, &cfg.ranges)?;
    let skeleton = grow_skeleton(&params, &mut rng)?;
    let cloud = sample_cloud(&skeleton, &params, &mut rng)?;

    let dsm = sensor::render_dsm(&cloud, &cfg.grid, cfg.splat_radius)?;
    let ortho = sensor::render_ortho(&cloud, &cfg.grid, cfg.splat_radius)?;
    let silhouette = sensor::render_silhouette(&dsm, cfg.h_min)?;
    let shadow = sensor::render_shadow_hard(&cloud, &cfg.sun, &cfg.grid, cfg.splat_radius)?;

    Ok(SceneSample {
        seed,
        cloud,
        ortho,
        dsm,
        silhouette,
        shadow,
        sun: cfg.sun,
        grid: cfg.grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_params(depth: u32, children: u32) -> TreeParams {
        TreeParams {
            trunk_height: 8.0,
            trunk_radius: 0.3,
            branch_depth: depth,
            children_per_branch: (children, children),
            length_decay: 0.6,
            radius_decay: 0.6,
            branch_angle_deg: (30.0, 40.0),
            crown_radius: 2.0,
            foliage_fraction: 0.9,
            n_points: 100,
        }
    }

    #[test]
    fn degenerate_ranges_reproduce_values() {
        let ranges = ParamRanges {
            trunk_height: Range::fixed(7.0),
            trunk_radius: Range::fixed(0.2),
            branch_depth: Range::fixed(3),
            children_per_branch: Range::fixed(2),
            length_decay: Range::fixed(0.5),
            radius_decay: Range::fixed(0.6),
            branch_angle_deg: Range::fixed(30.0),
            crown_radius: Range::fixed(2.5),
            foliage_fraction: Range::fixed(0.85),
            n_points: Range::fixed(321),
        };
        let p = sample_params(&mut Rng::new(1), &ranges).unwrap();
        assert_eq!(p.trunk_height, 7.0);
        assert_eq!(p.trunk_radius, 0.2);
        assert_eq!(p.branch_depth, 3);
        assert_eq!(p.children_per_branch, (2, 2));
        assert_eq!(p.length_decay, 0.5);
        assert_eq!(p.radius_decay, 0.6);
        assert_eq!(p.branch_angle_deg, (30.0, 30.0));
        assert_eq!(p.crown_radius, 2.5);
        assert_eq!(p.foliage_fraction, 0.85);
        assert_eq!(p.n_points, 321);
    }

    #[test]
    fn sample_params_deterministic() {
        let r = ParamRanges::default();
        assert_eq!(
            sample_params(&mut Rng::new(9), &r).unwrap(),
            sample_params(&mut Rng::new(9), &r).unwrap()
        );
    }

    #[test]
    fn trunk_height_mean_within_three_sigma() {
        let r = ParamRanges::default();
        let mut rng = Rng::new(2024);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| sample_params(&mut rng, &r).unwrap().trunk_height)
            .sum::<f64>()
            / n as f64;
        let (lo, hi) = (r.trunk_height.lo, r.trunk_height.hi);
        let sigma_mean = ((hi - lo) / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn empty_range_rejected() {
        let r = ParamRanges {
            trunk_height: Range::new(5.0, 4.0),
            ..ParamRanges::default()
        };
        assert!(matches!(sample_params(&mut Rng::new(0), &r), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn segment_counts() {
        let mut rng = Rng::new(5);
        assert_eq!(grow_skeleton(&fixed_params(0, 3), &mut rng).unwrap().segments.len(), 1);
        assert_eq!(grow_skeleton(&fixed_params(1, 3), &mut rng).unwrap().segments.len(), 4);
        assert_eq!(grow_skeleton(&fixed_params(2, 2), &mut rng).unwrap().segments.len(), 7);
    }

    #[test]
    fn point_count_and_labels() {
        let params = fixed_params(2, 2);
        let mut rng = Rng::new(8);
        let sk = grow_skeleton(&params, &mut rng).unwrap();
        let cloud = sample_cloud(&sk, &params, &mut rng).unwrap();
        assert_eq!(cloud.len(), 100);
        assert_eq!(cloud.colors.as_ref().unwrap().len(), 100);
        assert_eq!(cloud.classes.as_ref().unwrap().len(), 100);
        assert!(cloud.positions.iter().all(|p| p.z >= 0.0));
        let trunk = cloud
            .classes
            .as_ref()
            .unwrap()
            .iter()
            .filter(|&&c| c == PointClass::Trunk)
            .count();
        assert_eq!(trunk, 10);
    }

    fn axis_distance(p: Vec3, s: &Segment) -> f64 {
        let d = s.end - s.start;
        let t = ((p - s.start).dot(d) / d.norm_sq()).clamp(0.0, 1.0);
        (p - (s.start + d * t)).norm()
    }

    #[test]
    fn zero_foliage_fraction_gives_bark_only() {
        let params = TreeParams {
            foliage_fraction: 0.0,
            n_points: 500,
            ..fixed_params(2, 2)
        };
        let mut rng = Rng::new(21);
        let sk = grow_skeleton(&params, &mut rng).unwrap();
        let cloud = sample_cloud(&sk, &params, &mut rng).unwrap();
        assert!(cloud.classes.unwrap().iter().all(|&c| c == PointClass::Trunk));
        for p in &cloud.positions {
            let ok = sk
                .segments
                .iter()
                .any(|s| axis_distance(*p, s) <= s.radius + 1e-9);
            assert!(ok, "point {p:?} is off every segment surface");
        }
    }

    #[test]
    fn full_foliage_in_single_crown_sphere() {
        let params = TreeParams {
            foliage_fraction: 1.0,
            n_points: 400,
            ..fixed_params(0, 1)
        };
        let mut rng = Rng::new(4);
        let sk = grow_skeleton(&params, &mut rng).unwrap();
        let cloud = sample_cloud(&sk, &params, &mut rng).unwrap();
        let tip = Vec3::new(0.0, 0.0, params.trunk_height);
        for p in &cloud.positions {
            assert!((*p - tip).norm() <= params.crown_radius + 1e-9);
        }
        assert!(cloud.classes.unwrap().iter().all(|&c| c == PointClass::Foliage));
    }

    #[test]
    fn colors_stay_near_palette() {
        let params = fixed_params(2, 2);
        let mut rng = Rng::new(12);
        let sk = grow_skeleton(&params, &mut rng).unwrap();
        let cloud = sample_cloud(&sk, &params, &mut rng).unwrap();
        let colors = cloud.colors.unwrap();
        for (c, class) in colors.iter().zip(cloud.classes.unwrap()) {
            let base = match class {
                PointClass::Trunk => TRUNK_COLOR,
                PointClass::Foliage => FOLIAGE_COLOR,
            };
            for k in 0..3 {
                assert!((c[k] - base[k]).abs() <= COLOR_JITTER + 1e-12);
            }
        }
    }

    #[test]
    fn scene_is_deterministic_and_seed_sensitive() {
        let cfg = SceneConfig {
            grid: GridSpec::centered(32, 32, 0.5).unwrap(),
            ranges: ParamRanges {
                n_points: Range::fixed(300),
                ..ParamRanges::default()
            },
            ..SceneConfig::default()
        };
        let a = generate_scene(7, &cfg).unwrap();
        let b = generate_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(8, &cfg).unwrap();
        let cd = crate::losses::chamfer(&a.cloud, &c.cloud).unwrap().value;
        assert!(cd > 0.0);
    }
}
