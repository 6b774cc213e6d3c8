//! Experiment driver: configuration, the asynchronous simulation loop, run
//! logs and convergence diagnostics.

mod config;
mod metrics;
mod probe;
mod sim;

pub use config::{parse_config, ExperimentConfig, TaskConfig, MAX_MALICIOUS_FRACTION};
pub use metrics::{
    format_f64, read_metrics_csv, read_trace_csv, write_metrics_csv, EvalRecord, Metric, MetricsLog, RoundTrace,
};
pub use probe::{longest_nonincreasing_run, theory_probe, ProbeSettings, TheoryReport};
pub use sim::{
    build_setup, columns_for, local_step, run_experiment, sample_stale_base, ClientState, Setup, Simulation,
};
