use nvdeer::fit::FitError;
use nvdeer::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("config validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("input: {0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn numeric(context: impl Into<String>, source: impl Into<CoreError>) -> Self {
        let source = source.into();
        // bad or too little input data is an input problem, not a numeric one
        if let CoreError::Fit(
            e @ (FitError::InsufficientData { .. }
            | FitError::LengthMismatch { .. }
            | FitError::InvalidData(_)),
        ) = &source
        {
            return CliError::Input(format!("{}: {e}", context.into()));
        }
        if let CoreError::Tomography(e) = &source {
            return CliError::Input(format!("{}: {e}", context.into()));
        }
        CliError::Numeric {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Input(_) | CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
