//! End-to-end orchestration: corpus, spectra, selection, graphs, features,
//! classification, attribution and robustness sweeps.

mod config;
mod experiment;
mod stages;
mod sweep;

pub use config::{PipelineConfig, PreprocessConfig, ShapleyConfig, SynthSpec};
pub use experiment::{
    execute_runs, explain_rows, grid_csv, run_tables, RunTables, importance_csv, metrics_csv, permute_labels, prepare_inputs, run_experiment, run_once,
    run_seed, runs_csv, selection_json, with_pool, write_graphs, write_spectra, ExperimentReport, MeanStd, RunInputs,
    RunOutput, RunSummary, Spectral, Summary,
};
pub use stages::{
    compute_graphs, compute_spectra, group_correlations, group_keys, load_segments, select_groups, GroupSelection,
    Histogram, SELECTION_SEED,
};
pub use sweep::{sweep_lpc_order, sweep_threshold, SweepCell, SweepReport, SweepRow};
