use crate::dvf::Grid;
use dvfcast_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: Grid, right: Grid },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{what}: expected {expected} values, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("mask `{label}` has non-binary value {value}")]
    NonBinary { label: String, value: u8 },

    #[error("mask `{0}` is empty")]
    EmptyMask(String),

    #[error("{0}")]
    Degenerate(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing slices {missing:?} (expected {expected} slices)")]
    MissingSlices { missing: Vec<usize>, expected: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
