use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sun configuration: elevation {elevation_deg} deg must lie in (0, 90]")]
    InvalidSun { elevation_deg: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point cloud has no colors")]
    MissingColors,

    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("silhouette has no positive pixel")]
    EmptyFootprint,

    #[error("missing target: {0}")]
    MissingTarget(&'static str),

    #[error("malformed PLY at line {line}: {msg}")]
    MalformedPly { line: usize, msg: String },

    #[error("malformed PFM: {0}")]
    MalformedPfm(String),

    #[error("malformed PPM: {0}")]
    MalformedPpm(String),

    #[error("malformed manifest (field `{field}`): {msg}")]
    MalformedManifest { field: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
