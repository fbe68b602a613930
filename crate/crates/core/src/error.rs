use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient: {0}")]
    Gradient(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data: {0}")]
    Data(String),
    #[error("one-class contract violated: {0}")]
    OneClass(String),
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::Data(_) | Error::OneClass(_) | Error::Io(_) | Error::Image(_) | Error::Csv(_) => {
                ErrorKind::Data
            }
            Error::Numerical(_) | Error::NoConvergence { .. } => ErrorKind::Numerical,
            Error::Shape(_) | Error::Gradient(_) => ErrorKind::Internal,
        }
    }

    /// Prefixes the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Error {
        let wrap = |m: String| format!("{ctx}: {m}");
        match self {
            Error::Shape(m) => Error::Shape(wrap(m)),
            Error::InvalidArgument(m) => Error::InvalidArgument(wrap(m)),
            Error::Gradient(m) => Error::Gradient(wrap(m)),
            Error::Numerical(m) => Error::Numerical(wrap(m)),
            Error::Data(m) => Error::Data(wrap(m)),
            Error::OneClass(m) => Error::OneClass(wrap(m)),
            Error::Config(m) => Error::Config(wrap(m)),
            Error::NoConvergence { iterations, residual } => {
                Error::Numerical(wrap(format!("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")))
            }
            Error::Io(e) => Error::Data(wrap(e.to_string())),
            Error::Image(e) => Error::Data(wrap(e.to_string())),
            Error::Csv(e) => Error::Data(wrap(e.to_string())),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
