use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient spectral resolution: {bins} bins inside the band, need at least 3")]
    Resolution { bins: usize },

    #[error("spectrum has no peak (all power is zero)")]
    NoPeak,

    #[error("correlation is undefined for a constant input")]
    UndefinedCorrelation,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate heart rate variability: interbeat intervals carry no LF/HF power")]
    DegenerateVariability,

    #[error("invalid heart rate profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("ground truth margin too small: need {needed_s} s on each side, have {available_s} s")]
    Margin { needed_s: f64, available_s: f64 },

    #[error("format error in {path}: field `{field}`: {reason}")]
    Format {
        path: PathBuf,
        field: String,
        reason: String,
    },

    #[error("missing label: record {0} has phi = 1 but no gt.csv")]
    MissingLabel(PathBuf),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("non-finite loss at step {step} in term {term}")]
    NonFiniteLoss { step: usize, term: &'static str },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, field: &str, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
