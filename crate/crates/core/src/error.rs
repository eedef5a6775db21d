use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}, field `{field}`: {message}")]
    Validation {
        path: String,
        row: usize,
        field: String,
        message: String,
    },

    #[error("manifest `{0}` has no utterances")]
    EmptyManifest(String),

    #[error("manifest `{manifest}` has no rows in split {split}")]
    MissingSplit { manifest: String, split: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("audio of {samples} samples is shorter than one analysis window ({window} samples)")]
    AudioTooShort { samples: usize, window: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("embedding provider `{name}` is not registered; register an implementation of `EmbeddingProvider` under that name or select the TOY provider in the model config")]
    ProviderUnavailable { name: String },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("mapping degenerate: predictions are constant")]
    MappingDegenerate,

    #[error("correlation degenerate: {0}")]
    CorrDegenerate(String),

    #[error("statistics degenerate: {0}")]
    StatsDegenerate(String),

    #[error("checkpoint config hash mismatch: stored {stored}, expected {expected}")]
    ConfigHashMismatch { stored: String, expected: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("resampler: {0}")]
    Resample(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by user input or configuration rather than
    /// an internal failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::EmptyManifest(_)
                | Error::MissingSplit { .. }
                | Error::InvalidArgument(_)
                | Error::ProviderUnavailable { .. }
                | Error::ConfigHashMismatch { .. }
                | Error::Config(_)
                | Error::MissingPath(_)
                | Error::Csv(_)
        )
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "VALIDATION",
            Error::EmptyManifest(_) => "EMPTY_MANIFEST",
            Error::MissingSplit { .. } => "MISSING_SPLIT",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::AudioTooShort { .. } => "AUDIO_TOO_SHORT",
            Error::Shape { .. } => "SHAPE_MISMATCH",
            Error::EmptyInput(_) => "EMPTY_INPUT",
            Error::ProviderUnavailable { .. } => "PROVIDER_UNAVAILABLE",
            Error::Diverged { .. } => "DIVERGED",
            Error::MappingDegenerate => "MAPPING_DEGENERATE",
            Error::CorrDegenerate(_) => "CORR_DEGENERATE",
            Error::StatsDegenerate(_) => "DEGENERATE",
            Error::ConfigHashMismatch { .. } => "CONFIG_HASH_MISMATCH",
            Error::Config(_) => "CONFIG",
            Error::MissingPath(_) => "MISSING_PATH",
            Error::Io { .. } => "IO",
            Error::Csv(_) => "CSV",
            Error::Json(_) => "JSON",
            Error::Wav(_) => "WAV",
            Error::Resample(_) => "RESAMPLE",
        }
    }
}
