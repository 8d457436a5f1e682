use spreadgp::allocation::AllocationError;
use spreadgp::analysis::AnalysisError;
use spreadgp::dynamics::DynamicsError;
use spreadgp::netgraph::GraphError;
use spreadgp::spectral::SpectralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver limit: {0}")]
    SolverLimit(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::SolverLimit(_) => 4,
            CliError::Io(_) => 5,
            CliError::Verification(_) => 6,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AllocationError> for CliError {
    fn from(e: AllocationError) -> Self {
        match e {
            AllocationError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            AllocationError::IterationLimit { .. } => CliError::SolverLimit(e.to_string()),
            AllocationError::Verification { .. } => CliError::Verification(e.to_string()),
            AllocationError::Invalid(_)
            | AllocationError::NotStronglyConnected
            | AllocationError::DimensionTooLarge(_) => CliError::Validation(e.to_string()),
            AllocationError::Spectral(s) => s.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::NoConvergence { .. } => CliError::SolverLimit(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Invalid(_) | DynamicsError::TooLarge(_) => CliError::Validation(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Invalid(m) => CliError::Validation(m),
            AnalysisError::Spectral(s) => s.into(),
            AnalysisError::Allocation(a) => a.into(),
        }
    }
}
