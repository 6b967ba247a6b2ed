use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid crystal: {0}")]
    InvalidCrystal(String),
    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),
    #[error("angle {0} outside the admissible range [60, 120] degrees")]
    AngleOutOfRange(f64),
    #[error("composition mismatch: {0}")]
    CompositionMismatch(String),
    #[error("Niggli reduction did not converge within {0} iterations (degenerate cell)")]
    NiggliNonConvergence(usize),
    #[error("conditional target is singular at t = 1")]
    SingularTime,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("sampler failed: {0}")]
    Sampler(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error at {line}:{column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("CIF: {0}")]
    Cif(String),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
