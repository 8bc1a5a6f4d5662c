//! Benchmark harness: campaign configuration, deterministic seeding, the
//! Monte-Carlo engine with CSV emission, reference-tracking studies, the
//! bundled benchmark plant, and the desk-scale selftest battery.

pub mod config;
pub mod defaults;
pub mod montecarlo;
pub mod seeds;
pub mod selftest;
pub mod tracking;

pub use config::{parse_method_list, ExperimentConfig, Method};
pub use defaults::{benchmark_gains, benchmark_model, benchmark_plant};
pub use montecarlo::{
    compute_snr, ground_truth_gains, records_csv, run_monte_carlo, run_trajectories, summarize,
    summary_csv, RunRecord, SummaryRow, RECORDS_HEADER, SUMMARY_HEADER, THREADS_ENV_VAR,
};
pub use seeds::derive_seed;
pub use selftest::{all_passed, render, run_selftest, CheckItem};
pub use tracking::{default_reference, run_tracking, tracking_csv, TrackingResult};
