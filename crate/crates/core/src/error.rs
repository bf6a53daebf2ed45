//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]; variants are grouped by the
//! kind of failure so the CLI can map them onto stable exit codes without
//! string-matching messages.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file could not be parsed (bad number, wrong field count, ...).
    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A column required for the requested use is absent from the file.
    #[error("missing required column `{column}` ({usage})")]
    MissingColumn { column: String, usage: String },

    /// Timestamps are not uniformly spaced.
    #[error("non-uniform time base at row {row}: expected t = {expected}, found {found} (tolerance {tolerance} s)")]
    NonUniformTime {
        row: usize,
        expected: f64,
        found: f64,
        tolerance: f64,
    },

    /// A sample is NaN or infinite where finite data is required.
    #[error("non-finite value in `{channel}` at index {index}")]
    NonFinite { channel: String, index: usize },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A state left the domain on which the vehicle model is defined.
    #[error("model domain violated: {0}")]
    Domain(String),

    /// The optimizer was handed a start state outside the feasible box.
    #[error("infeasible start state: {0}")]
    InfeasibleStart(String),

    /// A signal is too short for the requested filtering operation.
    #[error("signal too short: need at least {required} samples, got {actual}")]
    SignalTooShort { required: usize, actual: usize },

    /// The requested filter specification cannot be met; the message reports
    /// the achieved margins.
    #[error("filter design failed: {0}")]
    FilterDesign(String),

    /// Two standstill insertions would occupy overlapping stretches of path.
    #[error("standstill marks {first} and {second} overlap: the second begins before the first's acceleration phase ends")]
    StopsOverlap { first: usize, second: usize },

    /// A stop profile needs more path than the trajectory has left.
    #[error("standstill at mark {mark} exceeds the remaining path: needs {needed:.3} m, {available:.3} m available")]
    PathExhausted {
        mark: usize,
        needed: f64,
        available: f64,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV-level failure.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
