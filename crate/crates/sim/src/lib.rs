//! Simulated annotators and the experiment harness.
//!
//! Workers are drawn from a [`population::PopulationSpec`], act through the
//! same [`vgold_core::session::Engine`] live sessions use, and are summarised
//! per condition after the spam filter.

pub mod analysis;
pub mod calibrate;
pub mod conditions;
pub mod harness;
pub mod model;
pub mod output;
pub mod population;
pub mod stats;
pub mod summary;

use std::path::PathBuf;

use thiserror::Error;
use vgold_core::dataset::DatasetError;
use vgold_core::scoring::ScoringError;
use vgold_core::session::{EngineError, SessionEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid worker: {0}")]
    InvalidWorker(String),
    #[error("invalid behaviour model: {0}")]
    InvalidModel(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    /// The partial log is kept for inspection.
    #[error("condition {condition:?}: population exhausted after {draws} workers with quota unmet")]
    PopulationExhausted {
        condition: String,
        draws: usize,
        events: Box<Vec<SessionEvent>>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}
