use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty interior: {0}")]
    EmptyGrid(String),
    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("quadrature tolerance not reached: estimated error {error:.3e} > {tol:.3e}")]
    Quadrature { error: f64, tol: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("Newton iteration escaped to the trivial solution (norm {0:.3e})")]
    BasinEscape(f64),
    #[error("contraction failed: estimated factor {0:.3} >= 1")]
    Divergence(f64),
    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
