//! Linear evaluation on frozen encoders, late stream fusion, per-format
//! classifier ensembling and per-class reporting.

mod fusion;
mod linear;
mod report;

use thiserror::Error;

pub use fusion::{ensemble_formats, fuse_streams, fusion_weight, EnsembleOrder, FUSION_WEIGHTS, STOCHASTIC_TOLERANCE};
pub use linear::{train_linear, FrozenEncoder, LinearHead, LinearSchedule};
pub use report::{
    evaluate, per_class_diff, score_cell, AccuracyReport, CellReport, ClassDiff, EnsembleReport, EvalReport, FusedReport,
    Protocol,
};

use crate::conventions::ConventionError;
use crate::dataio::{DataError, Stream};
use crate::graph::GraphError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("format `{format}` not among the checkpoint formats {available:?}")]
    UnknownFormat { format: String, available: Vec<String> },
    #[error("split `{0}` has no records")]
    EmptySplit(String),
    #[error("no trained head for stream `{stream}` and format `{format}`")]
    MissingHead { stream: Stream, format: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NonStochastic { row: usize, sum: f64 },
    #[error("class sets differ: {a} vs {b} classes")]
    ClassMismatch { a: usize, b: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Convention(#[from] ConventionError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
