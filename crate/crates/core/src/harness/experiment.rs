//! Trial orchestration.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ConfigMap, ExperimentConfig};
use super::output::write_trace_csv;
use super::stream::{load_stream, synth_stream, StreamSource};
use crate::analysis::{evaluate_bounds, Aggregator, BoundContext, BoundReport, Summary};
use crate::calibrators::run_calibrator;
use crate::conformal::{RoundScore, RunTrace};
use crate::corruption::Channel;
use crate::error::{Error, Result};

/// Trials handed to the worker pool at a time; bounds peak memory to one
/// batch of traces.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: Summary,
    /// One report per trial, in trial order.
    pub reports: Vec<BoundReport>,
    /// Trace of the trial selected by `outputs.trace_trial`.
    pub trace: Option<RunTrace>,
}

/// Seed of trial `i`, shared by stream synthesis and the channel.
pub fn trial_seed(base_seed: u64, i: usize) -> u64 {
    base_seed.wrapping_add(i as u64)
}

pub fn bound_context(cfg: &ExperimentConfig) -> BoundContext {
    BoundContext {
        algorithm: cfg.algorithm,
        w_bound: cfg.calibrator_spec().effective_w_bound(),
        channel: cfg.channel,
        schedule: cfg.schedule,
        corollaries: cfg.outputs.bounds.clone(),
        delta_conf: cfg.outputs.confidence_delta,
    }
}

/// Runs trial `i` end to end.
pub fn run_trial(cfg: &ExperimentConfig, i: usize, shared: Option<&[RoundScore]>) -> Result<RunTrace> {
    let seed = trial_seed(cfg.base_seed, i);
    let cal = &cfg.calibration;
    let owned;
    let stream = match shared {
        Some(s) => s,
        None => {
            owned = synth_stream(&cfg.stream, seed, cal.horizon, cal.score_bound)?;
            &owned[..]
        }
    };
    let mut channel = Channel::new(cfg.channel, seed)?;
    run_calibrator(&cfg.calibrator_spec(), stream, &mut channel, cal)
}

/// Executes every trial, evaluates bounds and aggregates in trial order.
///
/// A pathwise theorem violation (or an iterate leaving its guaranteed range)
/// aborts the run; the offending trace is written next to the summary (or to
/// the temp directory) and named in the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let shared: Option<Arc<Vec<RoundScore>>> = match cfg.stream.source {
        StreamSource::File => Some(Arc::new(load_stream(&cfg.stream, cfg.calibration.score_bound)?)),
        StreamSource::Synthetic => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let ctx = bound_context(cfg);
    let mut agg = Aggregator::new(cfg.calibration.horizon, cfg.outputs.stride)?;
    let mut reports = Vec::with_capacity(cfg.n_trials);
    let mut kept = None;

    let mut start = 0;
    while start < cfg.n_trials {
        let end = (start + BATCH).min(cfg.n_trials);
        let batch: Vec<Result<(RunTrace, BoundReport)>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| {
                    let trace = run_trial(cfg, i, shared.as_deref().map(Vec::as_slice))?;
                    let report = evaluate_bounds(&trace, &ctx)?;
                    Ok((trace, report))
                })
                .collect()
        });
        for (offset, item) in batch.into_iter().enumerate() {
            let i = start + offset;
            let (trace, report) = item?;
            check_pathwise(cfg, i, &trace, &report)?;
            agg.push(&trace, Some(&report))?;
            reports.push(report);
            if i == cfg.outputs.trace_trial {
                kept = Some(trace);
            }
        }
        start = end;
    }

    Ok(ExperimentOutput {
        summary: agg.finish(),
        reports,
        trace: kept,
    })
}

fn check_pathwise(cfg: &ExperimentConfig, trial: usize, trace: &RunTrace, report: &BoundReport) -> Result<()> {
    let failure = match (report.first_theorem_failure(), report.iterate.first_violation) {
        (Some(e), _) => Some((e.name.clone(), e.rhs, report.miscov_observed)),
        (None, Some(v)) => Some((
            format!("iterate range at round {} [{}, {}]", v.t, v.lo, v.hi),
            if v.value < v.lo { v.lo } else { v.hi },
            v.value,
        )),
        (None, None) => None,
    };
    let Some((bound, rhs, observed)) = failure else {
        return Ok(());
    };
    let dir = cfg
        .outputs
        .summary_path
        .as_ref()
        .and_then(|p| p.parent().map(PathBuf::from))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(std::env::temp_dir);
    let path = dir.join(format!(
        "violation_trial{trial}_seed{}.csv",
        trial_seed(cfg.base_seed, trial)
    ));
    write_trace_csv(trace, &path)?;
    Err(Error::BoundViolation {
        trial,
        bound,
        rhs,
        observed,
        dump: path.display().to_string(),
    })
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Assignments applied on top of the base configuration.
    pub overrides: Vec<(String, String)>,
    pub config: ExperimentConfig,
    pub output: ExperimentOutput,
}

/// Sets `key` to `value`, or, when the value is itself a `;`-separated list
/// of `key=value` assignments, applies those and treats `key` as a label.
pub fn apply_sweep_value(map: &mut ConfigMap, key: &str, value: &str) -> Result<()> {
    if value.contains('=') {
        for a in value.split(';').filter(|a| !a.trim().is_empty()) {
            map.assign(a)?;
        }
    } else {
        map.set(key, value);
    }
    Ok(())
}

/// Runs the full grid of `axes` (later axes vary fastest).
pub fn run_sweep(base: &ConfigMap, axes: &[(String, Vec<String>)]) -> Result<Vec<SweepPoint>> {
    for (k, values) in axes {
        if values.is_empty() {
            return Err(Error::Config(format!("sweep over '{k}' has no values")));
        }
    }
    let mut points = Vec::new();
    let mut index = vec![0usize; axes.len()];
    loop {
        let mut map = base.clone();
        let overrides: Vec<(String, String)> = axes
            .iter()
            .zip(&index)
            .map(|((k, vs), &i)| (k.clone(), vs[i].clone()))
            .collect();
        for (k, v) in &overrides {
            apply_sweep_value(&mut map, k, v)?;
        }
        let config = map.build()?;
        let output = run_experiment(&config)?;
        points.push(SweepPoint {
            overrides,
            config,
            output,
        });

        let mut d = axes.len();
        loop {
            if d == 0 {
                return Ok(points);
            }
            d -= 1;
            index[d] += 1;
            if index[d] < axes[d].1.len() {
                break;
            }
            index[d] = 0;
        }
    }
}
