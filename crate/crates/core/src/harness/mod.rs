//! Scenario configuration, Monte Carlo runner and result files.

pub mod config;
pub mod emit;
pub mod runner;

pub use config::ScenarioConfig;
pub use emit::{
    read_summary, read_trace, table1, trace_records, write_epochs, write_epochs_to, write_summary, write_summary_to,
    write_text, write_trace, write_trace_to, EpochRecord, Format, TraceRecord,
};
pub use runner::{
    monte_carlo, run_scenario, run_trial, summarize, synth_stream, trial_seed, Epoch, Method, MonteCarloReport,
    ScenarioRun, SummaryRow, TrialFailure,
};
