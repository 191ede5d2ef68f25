use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state invariant violated: {0}")]
    InvalidState(String),

    #[error("transition impossible under the reference law at generation {generation}, site {site}")]
    ImpossibleTransition { generation: usize, site: i64 },

    #[error("argument {0} is within tolerance of a lattice pole")]
    Pole(String),

    #[error("numerical solve did not converge: {what} (residual {residual:e})")]
    NonConvergence { what: String, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
