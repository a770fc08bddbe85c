use std::fmt;

use thiserror::Error;

/// A single located problem found while parsing a case file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number, or 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incomplete Cholesky breakdown at cell {cell}: modified diagonal {value:e}")]
    Breakdown { cell: usize, value: f64 },

    #[error("PCG did not converge in {iters} iterations (scaled residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("Picard loop did not converge in {iters} iterations (last change {delta:e} m)")]
    PicardFailure { iters: usize, delta: f64 },

    #[error("time step cannot shrink below dt_min = {dt_min} s at t = {t} s")]
    Unrecoverable { t: f64, dt_min: f64 },

    #[error("non-finite pressure head at t = {t} s")]
    Blowup { t: f64 },

    #[error("communication contract violated: {0}")]
    Contract(String),

    #[error("collective operation timed out on part {part}: {what}")]
    Deadlock { part: usize, what: String },

    #[error("time {t} s lies outside the flux series coverage [{start}, {end}] s")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid Gardner configuration: {0}")]
    Validity(String),

    #[error("case file error: {}", join_diagnostics(.0))]
    Parse(Vec<Diagnostic>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures the time controller recovers from by shrinking dt.
    pub fn is_step_failure(&self) -> bool {
        matches!(self, Error::NoConvergence { .. } | Error::PicardFailure { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
