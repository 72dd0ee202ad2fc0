use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{xmin}, {ymin}, {xmax}, {ymax}]: {reason}")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        reason: &'static str,
    },

    #[error("box lies entirely outside the {image_w}x{image_h} image after remapping")]
    ClippedToNothing { image_w: u32, image_h: u32 },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("detection references tile {0}, which is not in the plan")]
    UnknownTileId(u32),

    #[error("expected a detection set in the {expected} frame, got {found}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("no weight configured for source {0:?}")]
    UnknownSource(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt image: {0}")]
    CorruptImage(String),

    #[error("window ({x0},{y0},{w},{h}) is outside the {width}x{height} raster")]
    OutOfBounds {
        x0: u32,
        y0: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("class {0} has no ground truth")]
    NoGroundTruth(u32),

    #[error("no class has ground truth; mAP is undefined")]
    NoEvaluatedClasses,

    #[error("image {image_w}x{image_h} is smaller than the {crop_w}x{crop_h} crop")]
    ImageTooSmall {
        image_w: u32,
        image_h: u32,
        crop_w: u32,
        crop_h: u32,
    },

    #[error("retry budget exhausted after {attempts} attempts: kept {kept} of {requested} crops")]
    RetryBudgetExhausted {
        attempts: usize,
        kept: usize,
        requested: usize,
    },

    #[error("{pool} pool too small: need {needed}, have {available}")]
    InsufficientPool {
        pool: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("manifest references missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("adapter failed on tile {tile_id} ({}): {stderr}", exit_text(*.code))]
    AdapterFailed {
        tile_id: u32,
        code: Option<i32>,
        stderr: String,
    },

    #[error("tile {tile_id}: {source}")]
    InTile {
        tile_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn exit_text(code: Option<i32>) -> String {
    code.map_or_else(|| "killed by signal".to_string(), |c| format!("exit code {c}"))
}

impl Error {
    /// Short machine-readable category, used as the CLI error prefix and
    /// mapped onto FFI status codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } => "invalid-box",
            Error::ClippedToNothing { .. } => "clipped",
            Error::Parse { .. } => "parse",
            Error::UnknownTileId(_) => "unknown-tile",
            Error::FrameMismatch { .. } => "frame-mismatch",
            Error::UnknownSource(_) => "unknown-source",
            Error::Config(_) => "config",
            Error::NotFound(_) => "not-found",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::CorruptImage(_) => "corrupt-image",
            Error::OutOfBounds { .. } => "out-of-bounds",
            Error::NoGroundTruth(_) => "no-ground-truth",
            Error::NoEvaluatedClasses => "no-evaluated-classes",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::RetryBudgetExhausted { .. } => "retry-budget",
            Error::InsufficientPool { .. } => "insufficient-pool",
            Error::MissingFile(_) => "missing-file",
            Error::AdapterFailed { .. } => "adapter-failed",
            Error::InTile { source, .. } => source.category(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
