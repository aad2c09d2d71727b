use crate::solver::SolveResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("singular gradient: {0}")]
    Singularity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Backtracking exhausted its shrink budget. The best iterate found so
    /// far travels with the error.
    #[error("line search stagnated at iteration {iteration} after {shrinks} shrinks")]
    Stagnation {
        iteration: usize,
        shrinks: usize,
        best: Box<SolveResult>,
    },

    #[error("ladder rung {rung}: {source}")]
    Rung {
        rung: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Best iterate carried by a stagnation error, looking through rung wrappers.
    pub fn best_iterate(&self) -> Option<&SolveResult> {
        match self {
            Error::Stagnation { best, .. } => Some(best),
            Error::Rung { source, .. } => source.best_iterate(),
            _ => None,
        }
    }
}
