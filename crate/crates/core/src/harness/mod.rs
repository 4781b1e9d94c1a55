//! Stream ingestion and synthesis, experiment configuration, trial
//! orchestration and output emission.
//!
//! Trial `i` seeds both its score stream and its corruption channel with
//! `base_seed + i`; trials run in parallel and are folded back in trial order,
//! so outputs do not depend on the number of worker threads.

mod config;
mod experiment;
mod output;
mod presets;
mod stream;

pub use config::{ConfigMap, ExperimentConfig, OutputSpec, DEFAULT_PREFIX_SIZE};
pub use experiment::{
    apply_sweep_value, bound_context, run_experiment, run_sweep, run_trial, trial_seed, ExperimentOutput, SweepPoint,
};
pub use output::{
    emit_outputs, emit_sweep, read_trace_csv, summary_json, sweep_json, sweep_table, write_trace_csv, TRACE_HEADER,
};
pub use presets::{preset, Preset, PRESET_NAMES};
pub use stream::{load_stream, synth_stream, Generator, StreamSource, StreamSpec};
