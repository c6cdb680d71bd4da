//! Experiment orchestration: config-driven seeded runs, ablations, alpha
//! sweeps, throughput benchmarks, and report emission.

mod bootstrap;
mod config;
mod report;
mod run;

pub use bootstrap::{paired_bootstrap_chair_i_diff, BootstrapCi};
pub use config::{DivergenceSelect, ExperimentConfig, MetricsSelect, PopeSelect};
pub use report::{captions_jsonl, emit_report, metrics_csv, sweep_csv, write_run_outputs};
pub use run::{
    bench_throughput, mc_convergence_curve, run_experiment, run_experiment_in_memory, sweep_alpha,
    sweep_alpha_in_memory, CaptionDump, Comparison, FusedDistDump, McPoint, RunRecord,
    SourceReport, Throughput, ThroughputReport,
};
