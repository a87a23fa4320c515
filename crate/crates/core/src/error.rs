use thiserror::Error;

#[derive(Debug, Error)]
pub enum CssError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field/grid mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),
    #[error("linear solver failure: {0}")]
    SolverFailure(String),
    #[error("bracketing failed: {0}")]
    BracketFailure(String),
    #[error("not in the soliton tube: residuals ({rho1:.3e}, {rho2:.3e}) at the last iterate")]
    NotInTube { rho1: f64, rho2: f64 },
    #[error("problem size exceeds limit: {0}")]
    SizeLimit(String),
    #[error("blow-up detected at t = {t}: {detail}")]
    Blowup { t: f64, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

impl From<serde_json::Error> for CssError {
    fn from(e: serde_json::Error) -> Self {
        CssError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CssError>;
