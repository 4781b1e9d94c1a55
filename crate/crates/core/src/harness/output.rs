//! CSV traces and JSON summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::{ExperimentOutput, SweepPoint};
use crate::analysis::{BoundReport, Summary};
use crate::calibrators::Algorithm;
use crate::conformal::{quantile_gradient, CalibrationConfig, RunTrace, StepRecord};
use crate::error::{Error, Result};

/// Columns of the per-step trace CSV. The last two carry the internal iterate
/// and the applied prediction so stored traces can be re-checked.
pub const TRACE_HEADER: &str = "t,r,s,e_true,e_obs,z,set_size,in_range,is_training,iterate,q";

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let b = |x: bool| u8::from(x);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for s in &trace.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.r_played,
                s.s_true,
                b(s.e_true),
                b(s.e_obs),
                b(s.z),
                s.set_size,
                b(s.in_range),
                b(s.is_training),
                s.iterate,
                s.q
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV back. The final iterate is not stored, so it is
/// recomputed from the last row with the update rule of `algorithm`.
pub fn read_trace_csv(path: &Path, config: CalibrationConfig, algorithm: Algorithm) -> Result<RunTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            kind => Error::Parse {
                line: 1,
                message: format!("{kind:?}"),
            },
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("trace header must be '{TRACE_HEADER}'"),
        });
    }
    let mut steps = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {} is not a number", expected[i]),
                })
        };
        let flag = |i: usize| -> Result<bool> {
            match rec.get(i) {
                Some("0") => Ok(false),
                Some("1") => Ok(true),
                _ => Err(Error::Parse {
                    line,
                    message: format!("column {} must be 0 or 1", expected[i]),
                }),
            }
        };
        let t = rec
            .get(0)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                message: "column t is not a round index".into(),
            })?;
        steps.push(StepRecord {
            t,
            r_played: num(1)?,
            s_true: num(2)?,
            e_true: flag(3)?,
            e_obs: flag(4)?,
            z: flag(5)?,
            set_size: num(6)?,
            in_range: flag(7)?,
            is_training: flag(8)?,
            iterate: num(9)?,
            q: num(10)?,
        });
    }
    let last = steps
        .last()
        .ok_or_else(|| Error::Input(format!("{}: trace has no rows", path.display())))?;
    let r_final = next_iterate(last, &config, algorithm);
    let trace = RunTrace {
        config: CalibrationConfig {
            horizon: steps.len(),
            ..config
        },
        steps,
        r_final,
        p_hat: None,
    };
    trace.check_contiguous()?;
    Ok(trace)
}

fn next_iterate(s: &StepRecord, cfg: &CalibrationConfig, algorithm: Algorithm) -> f64 {
    let x = s.iterate;
    let g = match algorithm {
        Algorithm::OcpIdeal | Algorithm::Ocp => quantile_gradient(cfg.alpha, s.e_obs),
        Algorithm::Frocp | Algorithm::Acrocp => {
            if algorithm == Algorithm::Acrocp && s.is_training {
                return x;
            }
            if x >= cfg.score_bound {
                cfg.alpha
            } else if x < 0.0 {
                cfg.alpha - 1.0
            } else {
                let w = if s.e_obs { s.q } else { -s.q };
                quantile_gradient(cfg.alpha, s.e_obs) + w
            }
        }
    };
    x - cfg.eta * g
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    config: &'a ExperimentConfig,
    summary: &'a Summary,
    #[serde(skip_serializing_if = "<[BoundReport]>::is_empty")]
    bound_reports: &'a [BoundReport],
}

/// Summary JSON: config echo, per-step arrays, final metrics, bound reports.
pub fn summary_json(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<String> {
    let doc = SummaryDocument {
        config: cfg,
        summary: &out.summary,
        bound_reports: &out.reports,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidArgument(format!("summary serialization: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes whichever outputs the configuration names.
pub fn emit_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    if let (Some(path), Some(trace)) = (&cfg.outputs.trace_path, &out.trace) {
        write_trace_csv(trace, path)?;
    }
    if let Some(path) = &cfg.outputs.summary_path {
        let mut text = summary_json(cfg, out)?;
        text.push('\n');
        write_text(path, &text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepEntry<'a> {
    overrides: std::collections::BTreeMap<&'a str, &'a str>,
    config: &'a ExperimentConfig,
    summary: &'a Summary,
}

pub fn sweep_json(points: &[SweepPoint]) -> Result<String> {
    let entries: Vec<SweepEntry> = points
        .iter()
        .map(|p| SweepEntry {
            overrides: p.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
            config: &p.config,
            summary: &p.output.summary,
        })
        .collect();
    serde_json::to_string_pretty(&entries).map_err(|e| Error::InvalidArgument(format!("sweep serialization: {e}")))
}

/// Long-format table: one row per sweep point with the swept values and
/// final metrics.
pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::new();
    let Some(first) = points.first() else {
        return out;
    };
    let keys: Vec<&str> = first.overrides.iter().map(|(k, _)| k.as_str()).collect();
    out.push_str(&keys.join(","));
    if !keys.is_empty() {
        out.push(',');
    }
    out.push_str(
        "n_trials,coverage_mean,coverage_std,set_size_mean,set_size_std,miscov_mean,miscov_max,theorem_violations\n",
    );
    for p in points {
        let vals: Vec<&str> = p.overrides.iter().map(|(_, v)| v.as_str()).collect();
        out.push_str(&vals.join(","));
        if !vals.is_empty() {
            out.push(',');
        }
        let s = &p.output.summary;
        let violations: usize = p
            .output
            .reports
            .iter()
            .filter(|r| r.first_theorem_failure().is_some())
            .count();
        match &s.final_metrics {
            Some(m) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.n_trials,
                m.coverage_mean,
                m.coverage_std,
                m.set_size_mean,
                m.set_size_std,
                m.miscov_mean,
                m.miscov_max,
                violations
            )),
            None => out.push_str(&format!("{},,,,,,,{violations}\n", s.n_trials)),
        }
    }
    out
}

pub fn emit_sweep(points: &[SweepPoint], json_path: Option<&Path>, table_path: Option<&Path>) -> Result<()> {
    if let Some(p) = json_path {
        let mut text = sweep_json(points)?;
        text.push('\n');
        write_text(p, &text)?;
    }
    if let Some(p) = table_path {
        write_text(p, &sweep_table(points))?;
    }
    Ok(())
}
