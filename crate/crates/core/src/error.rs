use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned: averages {first} and {second} (indices {i} and {j}) are closer than the minimum relative separation {sep:e}")]
    IllConditioned {
        i: usize,
        j: usize,
        first: f64,
        second: f64,
        sep: f64,
    },

    #[error("ill-conditioned: {0}")]
    Singular(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("quadrature did not converge on [{a}, {b}]: estimate {value:e}, error {error:e} after {evals} evaluations")]
    Quadrature {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
        evals: usize,
    },

    #[error("complexity budget exceeded: about {terms} terms for N = {n} (budget N <= {max_n})")]
    Budget { n: usize, terms: u128, max_n: usize },

    #[error("{what} = {value} lies outside [0, 1] beyond rounding; the expansion is unreliable here")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
