//! Metrics, the with/without-function comparison harness, and report and
//! plot-data emission.

pub mod compare;
pub mod metrics;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use compare::{
    evaluate_predictor, evaluate_prepared, run_comparison, CellSummary, ComparisonConfig, ComparisonTable, MetricsReport,
    ModelDescriptor,
};
pub use metrics::{r2, MetricError};
pub use report::{
    comparison_csv, emit_curve_examples, emit_report, emit_scatter, emit_table, reconstruction_examples, summary_csv,
    CurveExample, ReportFormat,
};

use crate::dataio::DataError;
use crate::predictors::{DomainMode, PredictorError, PredictorKind};
use crate::reconstructor::ReconstructError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("target M{target}: {source}")]
    Target {
        target: usize,
        #[source]
        source: MetricError,
    },
    #[error("cell ({kind}, {mode}, seed {seed}) failed: {source}")]
    Cell {
        kind: PredictorKind,
        mode: DomainMode,
        seed: u64,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
