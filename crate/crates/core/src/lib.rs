//! Reconstruction of tree point clouds from a top-down orthophoto and a
//! digital surface model (DSM).
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] and [`rng`]: domain types, georeferencing, the portable RNG.
//! * [`protree`]: procedural tree generator used to synthesise ground truth.
//! * [`sensor`]: hard top-down rasterisers (orthophoto, DSM, silhouette, shadow).
//! * [`diffrender`]: soft, differentiable silhouette / DSM / shadow renderers.
//! * [`losses`]: Chamfer and raster losses and the combined objective.
//! * [`reconstruct`]: per-scene Adam optimisation of a point set.
//! * [`metrics`]: Chamfer / F-score evaluation and the DSM extrusion baseline.
//! * [`io`]: PLY, PFM, PPM and JSON manifest persistence.
//! * [`gradcheck`]: finite-difference verification of every analytic gradient.

pub mod diffrender;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
mod nn;
pub mod protree;
pub mod reconstruct;
pub mod rng;
pub mod sensor;
pub mod types;

pub use error::{Error, Result};
pub use rng::Rng;
pub use types::{Grid, GridSpec, PointClass, PointCloud, Rgb, RgbGrid, SunConfig, Vec3};
