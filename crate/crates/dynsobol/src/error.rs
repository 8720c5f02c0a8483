//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The model fails the stationarity requirement (companion spectral radius >= 1).
    #[error("model is not stationary: companion spectral radius {spectral_radius} >= {limit}")]
    NonStationary { spectral_radius: f64, limit: f64 },

    /// A matrix that must be symmetric positive semidefinite is not.
    #[error("{what} is not positive semidefinite (eigenvalue {min_eigenvalue} below tolerance)")]
    NotPositiveSemiDefinite { what: String, min_eigenvalue: f64 },

    /// The past-covariance matrix of the conditioning coordinate is singular,
    /// violating the full-rank hypothesis on the input trajectory.
    #[error(
        "covariance of the conditioning coordinate over window 0..={t} is not positive \
         definite (full-rank hypothesis on the input trajectory violated): {detail}"
    )]
    FullRankViolated { t: usize, detail: String },

    #[error("degenerate output: empirical variance is zero")]
    DegenerateOutput,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("model output is not finite at sample {sample}, t = {t}")]
    NonFiniteOutput { sample: usize, t: usize },

    #[error("{what} did not converge within {max_steps} steps (residual {residual})")]
    IterationLimit {
        what: String,
        max_steps: usize,
        residual: f64,
    },

    #[error("seasonal profile degenerate at hour {hour}: standard deviation {sigma} below 1e-8")]
    DegenerateHour { hour: usize, sigma: f64 },

    #[error("time series has gaps larger than {max_gap_hours} h: {gaps}")]
    GapsTooLarge { max_gap_hours: i64, gaps: String },

    #[error("regressor matrix is rank deficient (order {order}, {n_obs} observations)")]
    RankDeficient { order: usize, n_obs: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv parse error: {0}")]
    CsvParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code classification for the CLI: usage/config problems are 2,
    /// numerical failures are 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config(_) | Error::CsvParse(_) | Error::Io(_)
        )
    }
}
