use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input failed a structural check (schema, arms, ids, outcome finiteness).
    Validation(String),
    /// Two datasets could not be merged.
    Merge(String),
    /// A covariate value fell outside the bin grid.
    Binning {
        unit_id: usize,
        dimension: String,
        value: f64,
    },
    /// Overlap restriction produced no usable units.
    Restriction(String),
    /// Logistic fit diverged, usually perfect separation without a ridge.
    Divergence { iterations: usize },
    /// Singular or non-finite linear algebra.
    Numerical(String),
    /// Model columns could not be bound to the dataset schema.
    Scoring(String),
    /// A trimming rule retained no units.
    Trimming { low: f64, high: f64 },
    /// An estimator could not produce a number.
    Estimation(String),
    /// An argument was outside its mathematical domain.
    Domain(String),
    /// An observed outcome fell outside the declared outcome support.
    Support { value: f64, lo: f64, hi: f64 },
    /// Problem too large for exhaustive enumeration.
    Size { n: usize, max: usize },
    /// Too many bootstrap replicates failed.
    Bootstrap { failed: usize, total: usize },
    /// The non-identification witness could not be calibrated.
    Witness(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Merge(msg) => write!(f, "merge error: {msg}"),
            Error::Binning {
                unit_id,
                dimension,
                value,
            } => write!(
                f,
                "binning error: unit {unit_id} has {dimension} = {value} outside the grid"
            ),
            Error::Restriction(msg) => write!(f, "restriction error: {msg}"),
            Error::Divergence { iterations } => write!(
                f,
                "logistic fit diverged after {iterations} iterations (perfect separation?); use ridge > 0"
            ),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Scoring(msg) => write!(f, "scoring error: {msg}"),
            Error::Trimming { low, high } => {
                write!(f, "trimming error: no units with score in [{low}, {high}]")
            }
            Error::Estimation(msg) => write!(f, "estimation error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Support { value, lo, hi } => write!(
                f,
                "support error: outcome {value} lies outside [{lo}, {hi}]"
            ),
            Error::Size { n, max } => {
                write!(f, "size error: n = {n} exceeds enumeration limit {max}")
            }
            Error::Bootstrap { failed, total } => write!(
                f,
                "bootstrap error: {failed} of {total} replicates failed (limit 20%)"
            ),
            Error::Witness(msg) => write!(f, "witness error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
