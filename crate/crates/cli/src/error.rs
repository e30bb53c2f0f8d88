use std::path::PathBuf;

use coldcount_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 config/usage, 3 numerical, 4 detection quality.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidParameter { .. } | CoreError::Format(_) | CoreError::Csv(_) | CoreError::Io(_) => 2,
                CoreError::Calibration(_) | CoreError::DetectionQuality(_) => 4,
                CoreError::Truncation { .. }
                | CoreError::Singular(_)
                | CoreError::DegenerateDesign(_)
                | CoreError::NoConvergence { .. } => 3,
            },
        }
    }
}
