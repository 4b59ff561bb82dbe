//! Two-stage learning pipeline from partial stress-strain curves to the
//! Minkowski functionals of a porous microstructure.
//!
//! Stage 1 ([`reconstructor`]) recovers masked windows of a curve. Stage 2
//! ([`predictors`]) maps full curves to the four functionals, optionally
//! informed by the log-linear [`strength`] law. [`eval`] compares every
//! model family with and without that law.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod eval;
pub mod nnet;
pub mod predictors;
pub mod reconstructor;
pub mod seeds;
pub mod strength;

use std::path::PathBuf;

use thiserror::Error;

use dataio::DataError;
use eval::{EvalError, MetricError};
use nnet::NnError;
use predictors::PredictorError;
use reconstructor::ReconstructError;
use strength::LawError;

/// Process exit status for each error class.
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("provenance check failed: {0}")]
    Provenance(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for invalid input or configuration, 2 for failures during
    /// computation, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Exists(_) | Self::Provenance(_) => EXIT_VALIDATION,
            Self::Io { .. } => EXIT_IO,
            Self::Data(e) => data_code(e),
            Self::Law(e) => law_code(e),
            Self::Nn(e) => nn_code(e),
            Self::Reconstruct(e) => reconstruct_code(e),
            Self::Predictor(e) => predictor_code(e),
            Self::Eval(e) => eval_code(e),
        }
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn law_code(e: &LawError) -> i32 {
    match e {
        LawError::RankDeficient | LawError::Overflow(_) => EXIT_RUNTIME,
        _ => EXIT_VALIDATION,
    }
}

fn nn_code(e: &NnError) -> i32 {
    match e {
        NnError::Config(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn metric_code(_: &MetricError) -> i32 {
    EXIT_RUNTIME
}

fn reconstruct_code(e: &ReconstructError) -> i32 {
    match e {
        ReconstructError::Data(d) => data_code(d),
        ReconstructError::Nn(n) => nn_code(n),
        ReconstructError::Metric(m) => metric_code(m),
        ReconstructError::Invalid(_) => EXIT_VALIDATION,
    }
}

fn predictor_code(e: &PredictorError) -> i32 {
    match e {
        PredictorError::Config(_) | PredictorError::Checkpoint(_) => EXIT_VALIDATION,
        PredictorError::Shape(_) => EXIT_RUNTIME,
        PredictorError::Nn(n) => nn_code(n),
        PredictorError::Data(d) => data_code(d),
        PredictorError::Law(l) => law_code(l),
        PredictorError::Reconstruct(r) => reconstruct_code(r),
    }
}

fn eval_code(e: &EvalError) -> i32 {
    match e {
        EvalError::Invalid(_) => EXIT_VALIDATION,
        EvalError::Target { source, .. } => metric_code(source),
        EvalError::Cell { source, .. } => eval_code(source),
        EvalError::Predictor(p) => predictor_code(p),
        EvalError::Reconstruct(r) => reconstruct_code(r),
        EvalError::Data(d) => data_code(d),
        EvalError::Io { .. } => EXIT_IO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::from(NnError::NonFiniteLoss { epoch: 1, lr: 0.1 }).exit_code(), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(Error::io("/x", io).exit_code(), 3);
        let cell = EvalError::Cell {
            kind: predictors::PredictorKind::Knn,
            mode: predictors::DomainMode::WithFunction,
            seed: 0,
            source: Box::new(EvalError::Predictor(PredictorError::Nn(NnError::NonFinite { layer: 2 }))),
        };
        assert_eq!(Error::from(cell).exit_code(), 2);
        assert_eq!(Error::from(DataError::Invalid("bad".into())).exit_code(), 1);
    }
}
