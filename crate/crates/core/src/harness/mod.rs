//! Experiment harness: configuration files, checkpointed multi-seed runs,
//! metric CSVs, aggregation, sweeps and plots.

mod aggregate;
mod config;
mod metrics;
mod plot;
mod runner;
mod sweep;

pub use aggregate::{read_curve, render_aggregate, write_aggregate, AGGREGATE_VERSION};
pub use config::{load_config, parse_config, Precision, RunConfig, Validated, OUTPUT_ROOT_VAR};
pub use metrics::{format_float, header, LayerMetric, MetricRecord, Table, FIXED_COLUMNS, METRICS_VERSION};
pub use plot::{plot_files, render_svg, style};
pub use runner::{
    aggregate_runs, checkpoint_path, metrics_path, run_experiment, run_experiment_with, run_seed, ExperimentOutcome,
    RunControl, SeedOutcome, SeedStatus, AGGREGATE_FILE, CONFIG_FILE,
};
pub use sweep::{sweep, sweep_configs, SweepAxis, SweepOutcome, COMPARISON_FILE};
