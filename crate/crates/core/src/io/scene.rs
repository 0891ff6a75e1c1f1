//! A synthetic scene on disk: one directory holding the rasters, the
//! ground-truth cloud, and the manifest that ties them together.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::manifest::{read_manifest, write_manifest, Manifest, ManifestFiles};
use crate::io::{read_pfm, read_ply, read_ppm, write_pfm, write_ply, write_ppm};
use crate::protree::{SceneSample, GENERATOR_VERSION};
use crate::types::{Grid, PointCloud, RgbGrid};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn manifest_for(sample: &SceneSample) -> Manifest {
    Manifest {
        seed: sample.seed,
        grid: sample.grid,
        sun: sample.sun,
        files: ManifestFiles::default(),
        generator_version: GENERATOR_VERSION.to_string(),
    }
}

/// Writes `ortho.ppm`, `dsm.pfm`, `silhouette.pfm`, `shadow.pfm`, `gt.ply` and
/// `manifest.json` into `dir`, creating it if needed.
pub fn write_scene(sample: &SceneSample, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = manifest_for(sample);
    write_ppm(&sample.ortho, dir.join(&m.files.ortho))?;
    write_pfm(&sample.dsm, dir.join(&m.files.dsm))?;
    write_pfm(&sample.silhouette, dir.join(&m.files.silhouette))?;
    write_pfm(&sample.shadow, dir.join(&m.files.shadow))?;
    write_ply(&sample.cloud, dir.join(&m.files.cloud))?;
    write_manifest(&m, dir.join(MANIFEST_NAME))?;
    Ok(m)
}

/// A scene as loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub manifest: Manifest,
    pub ortho: RgbGrid,
    pub dsm: Grid,
    pub silhouette: Grid,
    pub shadow: Grid,
    pub cloud: PointCloud,
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<SceneFiles> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir.join(MANIFEST_NAME))?;
    let spec = manifest.grid;
    let f = &manifest.files;
    Ok(SceneFiles {
        ortho: read_ppm(dir.join(&f.ortho), &spec)?,
        dsm: read_pfm(dir.join(&f.dsm), &spec)?,
        silhouette: read_pfm(dir.join(&f.silhouette), &spec)?,
        shadow: read_pfm(dir.join(&f.shadow), &spec)?,
        cloud: read_ply(dir.join(&f.cloud))?,
        manifest,
    })
}
