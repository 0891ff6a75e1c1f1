//! Scene manifest (JSON).
//!
//! ```json
//! {
//!   "seed": 42,
//!   "grid": {"width": 128, "height": 128, "origin_x": -15.875, "origin_y": -15.875, "pixel_size": 0.25},
//!   "sun": {"azimuth_deg": 135.0, "elevation_deg": 55.0},
//!   "files": {"ortho": "ortho.ppm", "dsm": "dsm.pfm", "silhouette": "silhouette.pfm",
//!             "shadow": "shadow.pfm", "cloud": "gt.ply"},
//!   "generator_version": "arbor-protree/0.1.0"
//! }
//! ```
//!
//! Every field is required and unknown fields are rejected. Floats are
//! written in shortest round-trip form, so reading back is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GridSpec, SunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFiles {
    pub ortho: String,
    pub dsm: String,
    pub silhouette: String,
    pub shadow: String,
    pub cloud: String,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        Self {
            ortho: "ortho.ppm".into(),
            dsm: "dsm.pfm".into(),
            silhouette: "silhouette.pfm".into(),
            shadow: "shadow.pfm".into(),
            cloud: "gt.ply".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub grid: GridSpec,
    pub sun: SunConfig,
    pub files: ManifestFiles,
    pub generator_version: String,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::MalformedManifest {
            field: "<root>".into(),
            msg: e.to_string(),
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Manifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // Missing fields are reported against their parent; name the
            // field itself.
            let field = backticked(&msg)
                .filter(|_| msg.starts_with("missing field"))
                .map(|f| if path == "." { f.to_string() } else { format!("{path}.{f}") })
                .unwrap_or(path);
            Error::MalformedManifest { field, msg }
        })?;
        m.grid.validate().map_err(|e| Error::MalformedManifest {
            field: "grid".into(),
            msg: e.to_string(),
        })?;
        m.sun.validate().map_err(|e| Error::MalformedManifest {
            field: "sun.elevation_deg".into(),
            msg: e.to_string(),
        })?;
        Ok(m)
    }
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            seed: u64::MAX - 3,
            grid: GridSpec::new(128, 64, -15.875, 0.1 + 0.2, 0.25).unwrap(),
            sun: SunConfig::new(135.0, 55.5).unwrap(),
            files: ManifestFiles::default(),
            generator_version: "test/1".into(),
        }
    }

    #[test]
    fn round_trip_exact() {
        let m = sample();
        let back = Manifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.grid.origin_y.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    fn field_of(text: &str) -> String {
        match Manifest::from_json(text) {
            Err(Error::MalformedManifest { field, .. }) => field,
            other => panic!("expected MalformedManifest, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_extra_fields() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        let full = v.clone();
        v.as_object_mut().unwrap().remove("sun");
        assert_eq!(field_of(&v.to_string()), "sun");

        let mut v = full.clone();
        v.as_object_mut().unwrap().insert("extra".into(), 1.into());
        assert_eq!(field_of(&v.to_string()), "extra");

        let mut v = full.clone();
        v["grid"].as_object_mut().unwrap().insert("crs".into(), "x".into());
        assert_eq!(field_of(&v.to_string()), "grid.crs");

        let mut v = full.clone();
        v["files"].as_object_mut().unwrap().remove("shadow");
        assert_eq!(field_of(&v.to_string()), "files.shadow");

        let mut v = full.clone();
        v["grid"]["width"] = "wide".into();
        assert_eq!(field_of(&v.to_string()), "grid.width");

        let mut v = full;
        v["sun"]["elevation_deg"] = 0.0.into();
        assert_eq!(field_of(&v.to_string()), "sun.elevation_deg");
    }
}
