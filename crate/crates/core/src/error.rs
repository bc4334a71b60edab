use std::path::PathBuf;

use thiserror::Error;

/// Smallest tile side accepted by the tiler.
pub const MIN_TILE_SIZE: u32 = 8;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied input violated a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "tile size {tile_size} is too large for a {width}x{height} image; \
         usable tile sizes are {min}..={max}",
        min = MIN_TILE_SIZE
    )]
    TileSize {
        tile_size: u32,
        width: u32,
        height: u32,
        max: u32,
    },

    #[error("image is {width}x{height}; at least {min}x{min} pixels are needed to tile it", min = MIN_TILE_SIZE)]
    ImageTooSmall { width: u32, height: u32 },

    /// Stored or submitted data disagrees with the structures it references.
    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("unknown block id `{0}`")]
    UnknownBlock(String),

    /// A metric has no value for this input (e.g. rank correlation of a constant map).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("image decode failed: {0}")]
    Decode(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's input rather than the environment.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::TileSize { .. }
                | Error::ImageTooSmall { .. }
                | Error::DataIntegrity(_)
                | Error::UnknownBlock(_)
                | Error::UndefinedMetric(_)
                | Error::Decode(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
