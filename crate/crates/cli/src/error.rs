use std::path::PathBuf;

use pointassim::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{} is in use by another run; delete {} if no run is active", .0.display(), .0.join(".lock").display())]
    Locked(PathBuf),
    #[error("stale artifact: {0}")]
    Stale(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 config, 3 I/O, 4 schema or format, 5 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stale(_) => 2,
            CliError::Locked(_) => 1,
            CliError::Core(e) => match e {
                CoreError::Config(_) => 2,
                CoreError::Io { .. } => 3,
                CoreError::Schema(_) | CoreError::Format(_) => 4,
                CoreError::Numerical(_) => 5,
                CoreError::Nd(n) => match n {
                    ndcore::Error::NonFiniteGradient { .. } => 5,
                    ndcore::Error::Io(_) => 3,
                    ndcore::Error::Format(_) | ndcore::Error::Shape(_) => 4,
                    _ => 1,
                },
                _ => 1,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io { path: "<unknown>".into(), source: e })
    }
}
