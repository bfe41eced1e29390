use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid {field}: {constraint}")]
    Validation { field: String, constraint: String },

    /// A state left the region where the logarithms and square roots of the
    /// model are defined.
    #[error("domain error: {what} (value {value:e})")]
    Domain { what: &'static str, value: f64 },

    #[error(
        "algebraic solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error(
        "operating point is not constraint-consistent (residual {residual:e} > {tolerance:e})"
    )]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("substep limit of {limit} exceeded while integrating over {dt} s")]
    SubstepLimit { limit: usize, dt: f64 },

    #[error("measurement alignment: {0}")]
    Alignment(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}
