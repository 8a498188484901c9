use thiserror::Error;

/// Errors raised by the estimators and their numerical building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("failed to converge: {0}")]
    FailedToConverge(String),

    #[error("constraint set is infeasible: {0}")]
    InfeasibleConstraint(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<EstimationError>,
    },
}

impl EstimationError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EstimationError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        EstimationError::NumericalFailure(msg.into())
    }

    /// Attaches the MM iteration index at which the error surfaced.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ EstimationError::AtIteration { .. } => e,
            e => EstimationError::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with any iteration wrappers removed.
    pub fn root(&self) -> &EstimationError {
        match self {
            EstimationError::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by bad user input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self.root(), EstimationError::InvalidInput(_))
    }
}

pub type Result<T> = std::result::Result<T, EstimationError>;
