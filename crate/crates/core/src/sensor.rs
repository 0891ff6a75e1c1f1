//! Hard top-down rasterisers used as the synthetic sensor.
//!
//! Every point is drawn as a disk of fixed radius in the xy plane. A pixel is
//! covered by a point when its center lies within the disk (boundary
//! inclusive).

use crate::error::{Error, Result};
use crate::types::{Grid, GridSpec, PointCloud, Rgb, RgbGrid, SunConfig};

pub const DEFAULT_SPLAT_RADIUS: f64 = 0.15;
pub const GROUND_COLOR: Rgb = [0.55, 0.5, 0.42];

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("splat radius {r} must be non-negative")))
    }
}

/// Calls `f(pixel_index)` for every pixel whose center is within `radius` of `(x, y)`.
fn for_each_covered(spec: &GridSpec, x: f64, y: f64, radius: f64, mut f: impl FnMut(usize)) {
    let (u, v) = spec.xy_to_pixel(x, y);
    let r = radius / spec.pixel_size;
    let u0 = (u - r).ceil().max(0.0);
    let u1 = (u + r).floor().min(spec.width as f64 - 1.0);
    let v0 = (v - r).ceil().max(0.0);
    let v1 = (v + r).floor().min(spec.height as f64 - 1.0);
    if u0 > u1 || v0 > v1 {
        return;
    }
    let r2 = radius * radius;
    for pv in v0 as usize..=v1 as usize {
        for pu in u0 as usize..=u1 as usize {
            let (cx, cy) = spec.pixel_to_world(pu, pv);
            let (dx, dy) = (x - cx, y - cy);
            if dx * dx + dy * dy <= r2 {
                f(spec.index(pu, pv));
            }
        }
    }
}

/// Maximum covering height per pixel; 0 where nothing covers the pixel.
///
/// The ground plane takes part in the maximum, so points below z = 0 never
/// pull a pixel under the ground.
pub fn render_dsm(cloud: &PointCloud, spec: &GridSpec, splat_radius: f64) -> Result<Grid> {
    check_radius(splat_radius)?;
    let mut out = Grid::zeros(*spec);
    for p in &cloud.positions {
        for_each_covered(spec, p.x, p.y, splat_radius, |i| {
            out.values[i] = out.values[i].max(p.z);
        });
    }
    Ok(out)
}

/// Color of the highest covering point; equal heights go to the larger index.
pub fn render_ortho(cloud: &PointCloud, spec: &GridSpec, splat_radius: f64) -> Result<RgbGrid> {
    check_radius(splat_radius)?;
    let colors = cloud.colors.as_ref().ok_or(Error::MissingColors)?;
    if colors.len() != cloud.len() {
        return Err(Error::MissingColors);
    }
    let mut top: Vec<Option<(f64, usize)>> = vec![None; spec.len()];
    for (k, p) in cloud.positions.iter().enumerate() {
        for_each_covered(spec, p.x, p.y, splat_radius, |i| match top[i] {
            Some((z, _)) if z > p.z => {}
            _ => top[i] = Some((p.z, k)),
        });
    }
    Ok(RgbGrid {
        spec: *spec,
        values: top
            .into_iter()
            .map(|t| t.map_or(GROUND_COLOR, |(_, k)| colors[k]))
            .collect(),
    })
}

/// Binary mask: 1 where `dsm > h_min`.
pub fn render_silhouette(dsm: &Grid, h_min: f64) -> Result<Grid> {
    if !(h_min >= 0.0) {
        return Err(Error::InvalidConfig(format!("h_min {h_min} must be non-negative")));
    }
    Ok(Grid {
        spec: dsm.spec,
        values: dsm
            .values
            .iter()
            .map(|&h| if h > h_min { 1.0 } else { 0.0 })
            .collect(),
    })
}

/// Binary cast-shadow mask on the ground plane.
pub fn render_shadow_hard(
    cloud: &PointCloud,
    sun: &SunConfig,
    spec: &GridSpec,
    splat_radius: f64,
) -> Result<Grid> {
    check_radius(splat_radius)?;
    let (a, b) = sun.shadow_offset()?;
    let mut out = Grid::zeros(*spec);
    for p in &cloud.positions {
        let (sx, sy) = (p.x - p.z * a, p.y - p.z * b);
        for_each_covered(spec, sx, sy, splat_radius, |i| out.values[i] = 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vec3;

    fn unit_spec() -> GridSpec {
        GridSpec::new(9, 9, -4.0, -4.0, 1.0).unwrap()
    }

    fn cloud(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::from_positions(points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    #[test]
    fn dsm_examples() {
        let s = unit_spec();
        let g = render_dsm(&cloud(&[(0.0, 0.0, 7.0)]), &s, 0.0).unwrap();
        assert_eq!(g.get(4, 4), 7.0);
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.count_positive(), 1);

        let g = render_dsm(&cloud(&[(0.0, 0.0, 3.0), (0.1, 0.0, 9.0)]), &s, 0.4).unwrap();
        assert_eq!(g.get(4, 4), 9.0);
    }

    #[test]
    fn ortho_highest_wins() {
        let s = unit_spec();
        let green = [0.1, 0.8, 0.1];
        let brown = [0.4, 0.2, 0.1];
        let mut c = cloud(&[(0.0, 0.0, 9.0), (0.0, 0.0, 3.0)]);
        c.colors = Some(vec![green, brown]);
        let o = render_ortho(&c, &s, 0.3).unwrap();
        assert_eq!(o.get(4, 4), green);
        assert_eq!(o.get(1, 1), GROUND_COLOR);

        // equal heights: larger index wins
        let mut c = cloud(&[(0.0, 0.0, 3.0), (0.0, 0.0, 3.0)]);
        c.colors = Some(vec![green, brown]);
        assert_eq!(render_ortho(&c, &s, 0.3).unwrap().get(4, 4), brown);

        assert!(matches!(render_ortho(&cloud(&[(0.0, 0.0, 1.0)]), &s, 0.3), Err(Error::MissingColors)));
    }

    #[test]
    fn silhouette_threshold_is_strict() {
        let s = GridSpec::new(3, 1, 0.0, 0.0, 1.0).unwrap();
        let dsm = Grid::from_values(s, vec![0.0, 5.0, 0.5]).unwrap();
        let sil = render_silhouette(&dsm, 0.5).unwrap();
        assert_eq!(sil.values, vec![0.0, 1.0, 0.0]);
        let zero = render_silhouette(&Grid::zeros(s), 0.0).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shadow_examples() {
        let p = Vec3::new(0.0, 0.0, 10.0);
        let (sx, sy) = SunConfig::new(90.0, 45.0).unwrap().project(p).unwrap();
        assert!((sx + 10.0).abs() < 1e-12 && sy.abs() < 1e-12);
        assert_eq!(SunConfig::new(0.0, 90.0).unwrap().project(p).unwrap(), (0.0, 0.0));
        assert_eq!(
            SunConfig::new(33.0, 12.0).unwrap().project(Vec3::new(2.0, 3.0, 0.0)).unwrap(),
            (2.0, 3.0)
        );

        let s = GridSpec::new(21, 5, -15.0, -2.0, 1.0).unwrap();
        let g = render_shadow_hard(&cloud(&[(0.0, 0.0, 10.0)]), &SunConfig::new(90.0, 45.0).unwrap(), &s, 0.2)
            .unwrap();
        assert_eq!(g.count_positive(), 1);
        assert_eq!(g.get(5, 2), 1.0);
    }

    #[test]
    fn zenith_shadow_matches_silhouette() {
        let s = GridSpec::centered(24, 24, 0.25).unwrap();
        let mut rng = crate::Rng::new(31);
        let c = PointCloud::from_positions(
            (0..200)
                .map(|_| Vec3::new(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.1, 5.0)))
                .collect(),
        );
        let sun = SunConfig::new(0.0, 90.0).unwrap();
        let shadow = render_shadow_hard(&c, &sun, &s, 0.15).unwrap();
        let sil = render_silhouette(&render_dsm(&c, &s, 0.15).unwrap(), 0.0).unwrap();
        assert_eq!(shadow, sil);
    }

    #[test]
    fn adding_points_never_lowers_dsm() {
        let s = GridSpec::centered(16, 16, 0.5).unwrap();
        let mut rng = crate::Rng::new(2);
        let mut c = PointCloud::default();
        let mut prev = render_dsm(&c, &s, 0.3).unwrap();
        for _ in 0..100 {
            c.positions.push(Vec3::new(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(0.0, 6.0)));
            let next = render_dsm(&c, &s, 0.3).unwrap();
            assert!(next.values.iter().zip(&prev.values).all(|(a, b)| a >= b));
            prev = next;
        }
    }

    #[test]
    fn silhouette_pixels_lie_on_dsm_footprint() {
        let s = GridSpec::centered(16, 16, 0.5).unwrap();
        let mut rng = crate::Rng::new(3);
        let c = PointCloud::from_positions(
            (0..80)
                .map(|_| Vec3::new(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(0.0, 3.0)))
                .collect(),
        );
        let dsm = render_dsm(&c, &s, 0.3).unwrap();
        let sil = render_silhouette(&dsm, 1.0).unwrap();
        for (m, h) in sil.values.iter().zip(&dsm.values) {
            if *m == 1.0 {
                assert!(*h > 1.0);
            }
        }
    }
}
