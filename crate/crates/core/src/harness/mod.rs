//! Config-driven experiments: named test signals, error metrics, and the
//! generate → train → correct → predict → evaluate pipeline.

mod artifacts;
mod config;
mod metrics;
mod run;
mod signals;

pub use artifacts::{
    emit_plotdata, read_trajectory, read_trajectory_from, write_errors, write_trajectory, write_trajectory_to,
};
pub use config::{
    CaseConfig, DataSpec, ExperimentConfig, ExperimentSource, NetConfig, SyntheticExperiment, TransferConfig,
};
pub use metrics::{modified_relative_error, MetricsReport, ERROR_EPS};
pub use run::{
    correct_stage, evaluate, generate_hf, generate_primary, load_experiment, load_or_generate, load_surrogate,
    net_context, predict_signals, run_experiment, synthesize_rows, train_drips_stage, train_net_stage, truth_for,
    write_outcome, write_results, ExperimentOutcome, ExperimentReport, Layout, SignalResult, SignalRun, Surrogate,
};
pub use signals::{signal_ids, signal_registry, NamedSignal};
