use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
            CliError::Precondition(_) => 4,
        }
    }
}

impl From<capdirac::Error> for CliError {
    fn from(e: capdirac::Error) -> Self {
        use capdirac::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::UnsupportedDimension(_)
            | E::DimensionMismatch(_)
            | E::ScalingBound { .. }
            | E::InadmissibleTheta(_)
            | E::SupportExceedsBox { .. }
            | E::DirichletRadius { .. }
            | E::NotFrozen(_)
            | E::UntrustedBox(_) => CliError::Config { line: None, message: e.to_string() },
            E::Precondition(_) | E::NonRadial => CliError::Precondition(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}
