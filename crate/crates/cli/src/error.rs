use std::io::ErrorKind;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use wavecat::Error as CoreError;

/// Exit codes, stable across releases.
pub mod code {
    pub const OTHER: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const EMPTY: i32 = 3;
    pub const MISSING_ARTIFACT: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing artifact {path}: {message}")]
    MissingArtifact { path: String, message: String },

    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    component: Option<&'a str>,
}

fn core_kind(e: &CoreError) -> (&'static str, i32) {
    use CoreError::*;
    match e {
        Io { source, .. } if source.kind() == ErrorKind::NotFound => ("missing-artifact", code::MISSING_ARTIFACT),
        Io { .. } => ("io", code::OTHER),
        Csv(_) | MissingColumn(_) | UnknownPollutant(_) | UnalignedStart(_) | Json(_) => ("schema", code::SCHEMA),
        NoParseableRows | ColumnAllMissing(_) | EmptyData | EmptyHourBucket(_) | SeriesTooShort { .. } => {
            ("empty", code::EMPTY)
        }
        InvalidParam(_) | LagTooLarge { .. } | LevelOutOfRange { .. } | InvalidFilter(_) => ("invalid-parameter", code::SCHEMA),
        Component { source, .. } => core_kind(source),
        _ => ("numeric", code::NUMERIC),
    }
}

impl CliError {
    pub fn missing(path: &Path, e: std::io::Error) -> Self {
        CliError::MissingArtifact {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Write {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    fn kind(&self) -> (&'static str, i32) {
        match self {
            CliError::Config(_) => ("config", code::SCHEMA),
            CliError::MissingArtifact { .. } => ("missing-artifact", code::MISSING_ARTIFACT),
            CliError::Write { .. } => ("io", code::OTHER),
            CliError::Core(e) => core_kind(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().1
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let (kind, exit_code) = self.kind();
        let component = match self {
            CliError::Core(CoreError::Component { component, .. }) => Some(component.as_str()),
            _ => None,
        };
        let report = ErrorReport {
            kind,
            exit_code,
            message: self.to_string(),
            component,
        };
        serde_json::to_string(&report).expect("error report is always serializable")
    }
}
