//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("no parseable rows")]
    NoParseableRows,

    #[error("pollutant `{0}` has no observed values")]
    ColumnAllMissing(String),

    #[error("pollutant `{0}` still has missing values; impute first")]
    NotImputed(String),

    #[error("pollutant `{0}` is not present in the records")]
    UnknownPollutant(String),

    #[error("hour starting at {0} has no readings")]
    EmptyHourBucket(DateTime<Utc>),

    #[error("series start {0} is not aligned to an hour boundary")]
    UnalignedStart(DateTime<Utc>),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("series of length {len} is too short (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("degenerate normalization cannot invert non-zero values")]
    DegenerateScaleLeak,

    #[error("decomposition level {requested} outside admissible range 1..={max}")]
    LevelOutOfRange { requested: usize, max: usize },

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("lag {lag} must be smaller than series length {len}")]
    LagTooLarge { lag: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("expected {expected} features, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("empty training data")]
    EmptyData,

    #[error("component {component}: {source}")]
    Component {
        component: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no conformity scores inside the calibration window")]
    EmptyWindow,

    #[error("score time index {got} does not follow {last}")]
    OutOfOrder { last: i64, got: i64 },

    #[error("learned uncertainty needs at least {need} residuals, got {got}")]
    TooFewResiduals { got: usize, need: usize },

    #[error("seasonal-naive denominator is zero")]
    ZeroDenominator,

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("no range quantile tabulated for {models} models at alpha {alpha}")]
    UntabulatedQuantile { models: usize, alpha: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_component(self, component: impl Into<String>) -> Self {
        Error::Component {
            component: component.into(),
            source: Box::new(self),
        }
    }
}
