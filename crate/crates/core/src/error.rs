use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("covariance matrix is not positive definite")]
    SingularSigma,

    #[error("characteristic function is not integrable at t = {t}: condition value {margin} does not exceed 1/2")]
    NotInvertible { t: f64, margin: f64 },

    #[error("density grid too coarse: integral over the box is {integral}")]
    GridTooCoarse { integral: f64 },

    #[error("marginal density {density:e} at y1 = {y1} is outside the reliable grid support")]
    NearZeroMarginal { y1: f64, density: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("{failed} of {total} bootstrap refits failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is attributable to bad input rather than to the
    /// numerics. The command-line front end maps this to its exit code.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Infeasible(_)
                | Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
