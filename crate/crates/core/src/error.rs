use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// The two-atom jump kernel needs `h * |b| / sqrt(G) <= 1`.
    #[error("jump step too large at x = {position}: h*|b|/sqrt(G) = {ratio} exceeds 1")]
    StepSize { position: f64, ratio: f64 },

    #[error("horizon exhausted: {0}")]
    Horizon(String),

    #[error("quadrature did not reach tolerance: estimate {estimate}, error {error}, requested {tolerance}")]
    Quadrature {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("integrand is not integrable against the stable kernel: {0}")]
    Integrability(String),

    #[error("explicit step unstable: dt = {dt} exceeds bound {bound}")]
    Stability { dt: f64, bound: f64 },

    #[error("negative density {value} in cell {cell}")]
    Positivity { cell: usize, value: f64 },

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// An error raised inside one point of a sweep.
    #[error("at N = {n}: {source}")]
    AtSize {
        n: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Whether the error comes from invalid input rather than a failed run.
    pub fn is_configuration(&self) -> bool {
        match self {
            Error::Parameter { .. } | Error::Config { .. } => true,
            Error::AtSize { source, .. } => source.is_configuration(),
            _ => false,
        }
    }

    pub(crate) fn at_size(n: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::AtSize {
            n,
            source: Box::new(e),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Rejects orders outside the open unit interval.
pub(crate) fn check_order(name: &'static str, beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{beta} is not in (0, 1)")))
    }
}
