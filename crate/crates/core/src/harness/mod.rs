//! Experiment orchestration: configuration, dataset provisioning, algorithm
//! dispatch, metrics files and plots.

mod config;
mod metrics;
mod plot;
mod run;

pub use config::{load_config, save_config, Algorithm, ClientGroup, ExperimentConfig};
pub use metrics::{header, read_metrics, MetricsFile, MetricsRow, MetricsWriter, COMPLETE_MARKER, INCOMPLETE_MARKER};
pub use plot::{aggregate_curves, emit_plot, render_svg, Curve};
pub use run::{checkpoint_path, dataset_file_name, metrics_path, provision_datasets, run_experiment, run_seed, write_datasets, SeedOutcome};
