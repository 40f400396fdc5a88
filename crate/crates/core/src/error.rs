use std::path::PathBuf;

use crate::hypercube::CubeError;
use crate::masking::MaskError;
use crate::metrics::MetricsError;
use crate::sampling::SamplingError;
use crate::svm::SvmError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Io,
    Numeric,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Config => 2,
            ErrorFamily::Io => 3,
            ErrorFamily::Numeric => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing configuration field `{0}`")]
    MissingConfigField(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Cube(e) => e.family(),
            Error::Mask(e) => e.family(),
            Error::Sampling(e) => e.family(),
            Error::Svm(e) => e.family(),
            Error::Metrics(_) => ErrorFamily::Numeric,
            Error::Synth(_) => ErrorFamily::Config,
            Error::Config(_) | Error::MissingConfigField(_) => ErrorFamily::Config,
            Error::Io { .. } | Error::Json { .. } => ErrorFamily::Io,
            Error::Stage { source, .. } => source.family(),
        }
    }
}

/// Attach a pipeline stage label to any error convertible into [`Error`].
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
