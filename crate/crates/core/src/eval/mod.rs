//! Correlation metrics and the all / wild-type / non-wild evaluation views.

mod metrics;
mod report;

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;

pub use metrics::{average_ranks, pearson, spearman};
pub use report::{
    evaluate, evaluate_predictor, export_scatter, load_scatter, predict_rows, read_report,
    read_scatter, report_to_string, rows_from_truth, scatter_to_string, write_report, EvalReport,
    Pooling, PredictionRow, ReportRow, View, REPORT_COLUMNS, SCATTER_COLUMNS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no rows in view {view} for editor {editor}")]
    EmptyView { editor: String, view: View },
    #[error("unknown view {0:?} (all, wildtype, nonwild)")]
    UnknownView(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}
