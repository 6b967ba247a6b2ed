use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: artifact metadata: {reason}")]
    Meta { path: PathBuf, reason: String },
    #[error("{what} was produced with base {found}, but base {expected} was given (use --force to override)")]
    LineageMismatch { what: String, expected: String, found: String },
    #[error("no records could be ingested ({failed} failed)")]
    NothingIngested { failed: usize },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: anyhow::Error },
}
