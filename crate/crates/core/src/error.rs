use std::fmt;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector norm {norm:e} is at or below the degeneracy threshold")]
    NearZeroVector { norm: f64 },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("vector is not unit norm (|x| = {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("oscillating targets are defined for d = 3 only (got d = {dim})")]
    OscillatingDimension { dim: usize },

    #[error("expected {expected} weight increments (one per head), got {found}")]
    IncrementCount { expected: usize, found: usize },

    #[error("inner minimization diverged: objective increased for {streak} consecutive iterations (last J = {last:e}, best J = {best:e})")]
    InnerDivergence { streak: usize, last: f64, best: f64 },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse { line: usize, column: usize, message: String },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigValue { field: String, reason: String },

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("malformed series file: {0}")]
    Series(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{module}::{operation}: {source}")]
    Context {
        module: &'static str,
        operation: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl fmt::Display) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.to_string(),
        }
    }

    /// Innermost `(module, operation)` pair attached through [`ResultExt::context`].
    pub fn origin(&self) -> Option<(&'static str, &'static str)> {
        match self {
            Error::Context {
                module,
                operation,
                source,
            } => source.origin().or(Some((module, operation))),
            _ => None,
        }
    }

    /// Stable snake_case name of the innermost error variant.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NearZeroVector { .. } => "near_zero_vector",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotUnitNorm { .. } => "not_unit_norm",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::OscillatingDimension { .. } => "oscillating_dimension",
            Error::IncrementCount { .. } => "increment_count",
            Error::InnerDivergence { .. } => "inner_divergence",
            Error::ConfigParse { .. } => "config_parse",
            Error::ConfigValue { .. } => "config_value",
            Error::Archive(_) => "archive",
            Error::Series(_) => "series",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Context { .. } => unreachable!("root strips context"),
        }
    }

    /// The error with all context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub trait ResultExt<T> {
    fn context(self, module: &'static str, operation: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, module: &'static str, operation: &'static str) -> Result<T> {
        self.map_err(|source| Error::Context {
            module,
            operation,
            source: Box::new(source),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_reports_innermost_layer() {
        let r: Result<()> = Err(Error::NearZeroVector { norm: 0.0 });
        let e = r
            .context("sphere", "radial_normalize")
            .context("dynamics", "step_tokens")
            .unwrap_err();
        assert_eq!(e.origin(), Some(("sphere", "radial_normalize")));
        assert!(matches!(e.root(), Error::NearZeroVector { .. }));
        assert!(e.to_string().starts_with("dynamics::step_tokens"));
        assert_eq!(e.kind(), "near_zero_vector");
    }
}
