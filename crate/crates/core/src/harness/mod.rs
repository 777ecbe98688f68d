//! Experiment orchestration: configuration, training runs, model files and
//! reporting.

pub mod config;
pub mod model_io;
pub mod report;
pub mod run;

pub use config::{DatasetSpec, Generator, Method, PredictionMode, Splits, TrainConfig};
pub use model_io::{decode_model, encode_model, load_model, save_model};
pub use report::{
    emit_convergence_csv, histogram_csv, parse_convergence_csv, pi_histogram, ComparisonReport, EpochRecord,
    HistogramBin, RunReport,
};
pub use run::{initial_network, predict, predict_dataset, predict_probabilities, run_experiment, ExperimentOutcome, Prediction};
