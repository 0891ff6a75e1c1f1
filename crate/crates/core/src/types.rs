//! Domain types shared by every module.
//!
//! Conventions: meters everywhere, z up, flat ground at z = 0. The center of
//! pixel (0, 0) sits at `(origin_x, origin_y)`; column index `u` grows with +x
//! and row index `v` grows with +y (row 0 is the southern edge).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear RGB triple, each channel in `[0, 1]`.
pub type Rgb = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn dist_sq(self, o: Vec3) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Trunk,
    Foliage,
}

impl PointClass {
    pub fn code(self) -> u8 {
        match self {
            PointClass::Trunk => 0,
            PointClass::Foliage => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointClass::Trunk),
            1 => Some(PointClass::Foliage),
            _ => None,
        }
    }
}

/// A set of 3D points with optional per-point color and class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Option<Vec<Rgb>>,
    pub classes: Option<Vec<PointClass>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        Self {
            positions,
            colors: None,
            classes: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks the length and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{} colors for {} points",
                    c.len(),
                    n
                )));
            }
        }
        if let Some(c) = &self.classes {
            if c.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{} classes for {} points",
                    c.len(),
                    n
                )));
            }
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(format!("point {i} is not finite")));
        }
        Ok(())
    }
}

/// Raster geometry: size plus the world position of pixel (0, 0)'s center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        let spec = Self {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A grid whose center coincides with the world origin.
    pub fn centered(width: usize, height: usize, pixel_size: f64) -> Result<Self> {
        let ox = -((width as f64 - 1.0) / 2.0) * pixel_size;
        let oy = -((height as f64 - 1.0) / 2.0) * pixel_size;
        Self::new(width, height, ox, oy, pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "pixel_size must be positive, got {}",
                self.pixel_size
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::InvalidConfig("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Continuous pixel coordinates of a world point; may fall outside the grid.
    pub fn world_to_pixel(&self, p: Vec3) -> (f64, f64) {
        self.xy_to_pixel(p.x, p.y)
    }

    pub fn xy_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (y - self.origin_y) / self.pixel_size,
        )
    }

    /// World (x, y) of the center of pixel `(u, v)`.
    pub fn pixel_to_world(&self, u: usize, v: usize) -> (f64, f64) {
        (
            self.origin_x + u as f64 * self.pixel_size,
            self.origin_y + v as f64 * self.pixel_size,
        )
    }

    /// Nearest pixel to a world point, or `None` when it lies outside the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (u, v) = self.xy_to_pixel(x, y);
        let (u, v) = (u.round(), v.round());
        if u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Single-channel float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::filled(spec, 0.0)
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.width,
                spec.height
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[self.spec.index(u, v)]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        let i = self.spec.index(u, v);
        self.values[i] = value;
    }

    pub fn scaled(&self, s: f64) -> Grid {
        Grid {
            spec: self.spec,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Three-channel raster (the orthophoto).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    pub spec: GridSpec,
    pub values: Vec<Rgb>,
}

impl RgbGrid {
    pub fn filled(spec: GridSpec, value: Rgb) -> Self {
        Self {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<Rgb>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "{} pixels for a {}x{} grid",
                values.len(),
                spec.width,
                spec.height
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn get(&self, u: usize, v: usize) -> Rgb {
        self.values[self.spec.index(u, v)]
    }

    pub fn set(&mut self, u: usize, v: usize, value: Rgb) {
        let i = self.spec.index(u, v);
        self.values[i] = value;
    }
}

/// Sun position: azimuth clockwise from north (+y), elevation above the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SunConfig {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl SunConfig {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        let sun = Self {
            azimuth_deg,
            elevation_deg,
        };
        sun.validate()?;
        Ok(sun)
    }

    pub fn validate(&self) -> Result<()> {
        let el = self.elevation_deg;
        if !(el > 0.0 && el <= 90.0) || !self.azimuth_deg.is_finite() {
            return Err(Error::InvalidSun { elevation_deg: el });
        }
        Ok(())
    }

    /// Unit direction in which light travels (pointing away from the sun).
    pub fn direction(&self) -> Result<Vec3> {
        self.validate()?;
        let phi = self.azimuth_deg.to_radians();
        let theta = self.elevation_deg.to_radians();
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        Ok(Vec3::new(-sp * ct, -cp * ct, -st))
    }

    /// Horizontal shadow displacement per meter of height, `(sinφ/tanθ, cosφ/tanθ)`.
    ///
    /// A point `(x, y, z)` casts its shadow at `(x - z·a, y - z·b)`. Exactly zero
    /// at the zenith.
    pub fn shadow_offset(&self) -> Result<(f64, f64)> {
        self.validate()?;
        if self.elevation_deg == 90.0 {
            return Ok((0.0, 0.0));
        }
        let phi = self.azimuth_deg.to_radians();
        let cot = 1.0 / self.elevation_deg.to_radians().tan();
        Ok((phi.sin() * cot, phi.cos() * cot))
    }

    /// Ground position of the shadow cast by `p`.
    pub fn project(&self, p: Vec3) -> Result<(f64, f64)> {
        let (a, b) = self.shadow_offset()?;
        Ok((p.x - p.z * a, p.y - p.z * b))
    }
}

/// Light-travel direction for a sun configuration.
pub fn sun_direction(sun: &SunConfig) -> Result<Vec3> {
    sun.direction()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ox: f64, oy: f64, ps: f64) -> GridSpec {
        GridSpec::new(16, 16, ox, oy, ps).unwrap()
    }

    #[test]
    fn world_to_pixel_examples() {
        assert_eq!(spec(0.0, 0.0, 1.0).world_to_pixel(Vec3::new(0.0, 0.0, 5.0)), (0.0, 0.0));
        assert_eq!(spec(0.0, 0.0, 0.5).world_to_pixel(Vec3::new(2.0, 3.0, 0.0)), (4.0, 6.0));
        assert_eq!(spec(-5.0, -5.0, 1.0).world_to_pixel(Vec3::new(0.0, 0.0, 0.0)), (5.0, 5.0));
    }

    #[test]
    fn pixel_round_trip_on_centers() {
        let s = GridSpec::new(37, 23, -3.17, 12.9, 0.23).unwrap();
        for v in 0..s.height {
            for u in 0..s.width {
                let (x, y) = s.pixel_to_world(u, v);
                let (pu, pv) = s.xy_to_pixel(x, y);
                assert!((pu - u as f64).abs() * s.pixel_size < 1e-9);
                assert!((pv - v as f64).abs() * s.pixel_size < 1e-9);
                assert_eq!(s.pixel_of(x, y), Some((u, v)));
            }
        }
    }

    #[test]
    fn sun_direction_examples() {
        let d = SunConfig::new(0.0, 90.0).unwrap().direction().unwrap();
        assert!(d.x.abs() < 1e-15 && d.y.abs() < 1e-15 && (d.z + 1.0).abs() < 1e-15);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = SunConfig::new(90.0, 45.0).unwrap().direction().unwrap();
        assert!((d.x + h).abs() < 1e-12 && d.y.abs() < 1e-12 && (d.z + h).abs() < 1e-12);

        let d = SunConfig::new(180.0, 30.0).unwrap().direction().unwrap();
        assert!(d.x.abs() < 1e-12);
        assert!((d.y - 0.8660254037844386).abs() < 1e-12);
        assert!((d.z + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sun_direction_is_unit() {
        for az in (0..360).step_by(7) {
            for el in 1..=90 {
                let d = SunConfig::new(az as f64, el as f64).unwrap().direction().unwrap();
                assert!((d.norm() - 1.0).abs() < 1e-12);
                assert!(d.z < 0.0);
            }
        }
    }

    #[test]
    fn invalid_sun_rejected() {
        assert!(matches!(SunConfig::new(0.0, 0.0), Err(Error::InvalidSun { .. })));
        assert!(matches!(SunConfig::new(0.0, -5.0), Err(Error::InvalidSun { .. })));
        assert!(matches!(SunConfig::new(0.0, 90.5), Err(Error::InvalidSun { .. })));
        assert!(SunConfig::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn invalid_grid_rejected() {
        assert!(GridSpec::new(0, 4, 0.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0, 0.0, 0.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn centered_grid_is_symmetric() {
        let s = GridSpec::centered(128, 128, 0.25).unwrap();
        let (x0, y0) = s.pixel_to_world(0, 0);
        let (x1, y1) = s.pixel_to_world(127, 127);
        assert_eq!(x0, -x1);
        assert_eq!(y0, -y1);
    }
}
