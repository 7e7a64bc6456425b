use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] thermoform::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for numerical failures, 3 for
    /// acceptance failures under `--strict`.
    pub fn exit_code(&self) -> i32 {
        use thermoform::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(E::MalformedModel(_) | E::MalformedPotential(_) | E::InvalidArgument(_)) => 1,
            CliError::Numerical(_) | CliError::Csv(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}
