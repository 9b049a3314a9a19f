use thiserror::Error;

/// Failures of the experiment runner, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("run `{run}` failed: {source}")]
    Run {
        run: String,
        #[source]
        source: privaudit_core::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Tags a core error with the run that produced it, routing
    /// configuration errors to the schema variant.
    pub fn run(run: impl Into<String>, source: privaudit_core::Error) -> Self {
        use privaudit_core::Error as E;
        match source {
            E::Config { field, message } => CliError::Schema { path: field, message },
            E::Io(e) => CliError::io(run, e),
            E::Csv(e) if e.is_io_error() => match e.into_kind() {
                csv::ErrorKind::Io(io) => CliError::io(run, io),
                _ => unreachable!(),
            },
            other => CliError::Run {
                run: run.into(),
                source: other,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        use privaudit_core::Error as E;
        match self {
            CliError::Schema { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::Run { source, .. } => match source {
                E::Divergence { .. } | E::NonFinite(_) | E::SamplerAborted { .. } => 3,
                E::Domain(_) => 2,
                E::Format(_) | E::Json(_) | E::Csv(_) => 4,
                _ => 1,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
