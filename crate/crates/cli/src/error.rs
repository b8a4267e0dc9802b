use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Model(#[from] factm_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, message: String) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            line,
            message,
        }
    }

    /// 2 for bad input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use factm_core::Error as E;
        match self {
            Self::Io { .. } => 1,
            Self::Parse { .. } | Self::Validation(_) => 2,
            Self::Model(E::Invalid(_) | E::Shape(_) | E::UnknownScenario { .. } | E::Decode(_)) => 2,
            Self::Model(E::SingularCovariance { .. } | E::NonFinite { .. } | E::NotOrthogonal { .. }) => 3,
        }
    }
}
