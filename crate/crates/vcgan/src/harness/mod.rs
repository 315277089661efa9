//! Datasets, configuration, experiment orchestration, ablation sweeps, and
//! file emission.

pub mod battery;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod emit;
pub mod run;

pub use battery::{gradcheck_battery, CheckResult, GRAD_TOL};
pub use config::{DatasetKind, ExperimentConfig};
pub use dataset::{load_idx, make_mixture_dataset, make_shapes_dataset, write_idx, Dataset};
pub use emit::{emit_sample_grid, emit_scatter, format_sig, read_scatter, TrainLog};
pub use run::{
    ablation_run, build_classifier, build_dataset, evaluate_bundle, generate_per_class,
    restore_bundle, run_experiment, AblationRow, RunArtifacts,
};

use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic { path: String, found: u32, expected: u32 },
    #[error("IDX pair holds {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("{0}: IDX file is truncated")]
    IdxTruncated(String),
    #[error("emit error: {0}")]
    Emit(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training aborted: {source}")]
    Aborted {
        source: TrainError,
        /// Most recent periodic checkpoint, retained for recovery.
        last_checkpoint: Option<std::path::PathBuf>,
    },
}
