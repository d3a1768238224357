use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("integration failure: non-finite derivative at t = {t}")]
    IntegrationFailure { t: f64 },

    #[error("invalid bracket [{lo}, {hi}]: f(lo) = {f_lo} and f(hi) = {f_hi} have the same sign")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("no convergence after {iterations} iterations (best iterate {best})")]
    Convergence { iterations: usize, best: f64 },

    #[error("target {target} outside [{f_lo}, {f_hi}]")]
    Range { target: f64, f_lo: f64, f_hi: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("price floor reached: holdings {x} <= {floor} at t = {t}")]
    PriceFloor { x: f64, floor: f64, t: f64 },

    #[error("no plateau: {0}")]
    NoPlateau(String),

    #[error("grid too coarse: {reason}; retry with dt = {suggested_dt}")]
    GridTooCoarse { reason: String, suggested_dt: f64 },

    #[error("extremum lies on the boundary of the sample window (index {index})")]
    BoundaryExtremum { index: usize },

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("I/O failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// True for failures that come from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IntegrationFailure { .. }
                | Error::Bracket { .. }
                | Error::Convergence { .. }
                | Error::Range { .. }
                | Error::PriceFloor { .. }
                | Error::NoPlateau(_)
                | Error::GridTooCoarse { .. }
                | Error::BoundaryExtremum { .. }
                | Error::Domain(_)
                | Error::Consistency(_)
        )
    }
}
