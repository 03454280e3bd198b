use thiserror::Error;

/// Errors surfaced by the library. Contract violations (e.g. a negative
/// compensator increment beyond tolerance) are reported as errors rather
/// than silently clamped.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: operands live on different time grids")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("non-finite value produced by {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },
    #[error("control value {value:?} outside the declared control set")]
    ControlOutsideSet { value: Vec<f64> },
    #[error("noise length {got} does not match required {expected}")]
    NoiseLength { expected: usize, got: usize },
    #[error("tree node cap {cap} exceeded")]
    NodeCapExceeded { cap: usize },
    #[error("control family cap {cap} exceeded: would enumerate {requested} controls")]
    FamilyCapExceeded { cap: usize, requested: usize },
    #[error("partition cell index {cell} out of range ({cells} cells)")]
    CellOutOfRange { cell: usize, cells: usize },
    #[error("unknown {kind} `{name}` in registry")]
    UnknownName { kind: &'static str, name: String },
    #[error("degenerate diffusion at step {step}: Z undefined where sigma = 0")]
    DegenerateDiffusion { step: usize },
    #[error("compensator increment {value} below -{tol} at step {step}: inconsistent value process")]
    NegativeCompensator { value: f64, tol: f64, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
