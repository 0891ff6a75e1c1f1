//! On-disk formats.
//!
//! * Point clouds: ASCII PLY ([`ply`]).
//! * Float rasters (DSM, silhouette, shadow): grayscale PFM ([`pfm`]).
//! * The orthophoto: binary PPM ([`ppm`]).
//! * Georeference, sun and file names: a JSON manifest ([`manifest`]).
//!
//! Rasters carry no georeference of their own; the manifest is the only place
//! that records the [`GridSpec`](crate::GridSpec). Images are stored north-up:
//! PFM lists rows bottom-to-top, so grid row 0 is written first, while PPM
//! lists rows top-to-bottom, so grid row `height - 1` is written first.

pub mod manifest;
pub mod pfm;
pub mod ply;
pub mod ppm;
pub mod scene;

pub use manifest::{read_manifest, write_manifest, Manifest, ManifestFiles};
pub use pfm::{read_pfm, read_pfm_raw, write_pfm};
pub use ply::{read_ply, write_ply};
pub use ppm::{read_ppm, read_ppm_raw, write_ppm};
pub use scene::{read_scene, write_scene, SceneFiles};

/// Channel value to byte: `round_half_up(c * 255)` after clamping to `[0, 1]`.
pub fn quantize_channel(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize_channel(b: u8) -> f64 {
    b as f64 / 255.0
}
