//! `rocp`: run, sweep and re-check corrupted-feedback conformal experiments.
//!
//! Exit codes: 0 success, 1 error, 2 bound violation, 3 zero trials run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rocp_core::analysis::evaluate_bounds;
use rocp_core::harness::{
    bound_context, emit_outputs, emit_sweep, preset, read_trace_csv, run_experiment, run_sweep, sweep_table, ConfigMap,
    PRESET_NAMES,
};
use rocp_core::Error;

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_EMPTY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rocp",
    version,
    about = "Online conformal prediction under corrupted feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment configuration.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a grid over one or more parameters.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Parameter and comma-separated values, e.g. `channel.p=0.1,0.2`. Repeatable.
        #[arg(long = "vary", value_name = "KEY=V1,V2,...")]
        vary: Vec<String>,
    },
    /// Re-evaluate bounds on a stored trace CSV.
    CheckBounds {
        /// Trace written by `run` (outputs.trace_path).
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// List the named presets.
    Presets,
}

#[derive(Args)]
struct ConfigArgs {
    /// Named preset supplying the base configuration (and sweep axes).
    #[arg(long)]
    preset: Option<String>,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` assignment. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output directory for summary, trace and sweep files.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    /// Preset base, then file, then `--set`, then the named flags.
    fn map(&self) -> Result<ConfigMap> {
        let mut map = match &self.preset {
            Some(name) => preset(name)?.base_map()?,
            None => ConfigMap::default(),
        };
        if let Some(path) = &self.config {
            for (k, v) in ConfigMap::from_file(path)?.entries() {
                map.set(k, v);
            }
        }
        for a in &self.set {
            map.assign(a)?;
        }
        let flags = [
            ("calibration.alpha", self.alpha.map(|v| v.to_string())),
            ("calibration.eta", self.eta.map(|v| v.to_string())),
            ("algorithm", self.algorithm.clone()),
            ("n_trials", self.trials.map(|v| v.to_string())),
            ("base_seed", self.seed.map(|v| v.to_string())),
            ("parallelism", self.parallelism.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.set(k, &v);
            }
        }
        Ok(map)
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(self.out.as_deref())
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(args: &ConfigArgs) -> Result<u8> {
    let mut map = args.map()?;
    if let Some(dir) = args.out_dir()? {
        map.set("outputs.summary_path", &path_str(&dir.join("summary.json")));
        map.set("outputs.trace_path", &path_str(&dir.join("trace.csv")));
    }
    let cfg = map.build()?;
    let out = run_experiment(&cfg)?;
    emit_outputs(&cfg, &out)?;
    let s = &out.summary;
    match &s.final_metrics {
        None => {
            println!("ran 0 trials");
            Ok(EXIT_EMPTY)
        }
        Some(m) => {
            println!(
                "{} trials of {} rounds, {}: coverage {:.4} ± {:.4}, set size {:.4}, MisCov mean {:.5} max {:.5}",
                s.n_trials,
                s.horizon,
                cfg.algorithm.name(),
                m.coverage_mean,
                m.coverage_std,
                m.set_size_mean,
                m.miscov_mean,
                m.miscov_max
            );
            for b in &s.bounds {
                println!("  {:<18} violations {}/{}", b.name, b.violations, b.trials);
            }
            Ok(0)
        }
    }
}

fn sweep(args: &ConfigArgs, vary: &[String]) -> Result<u8> {
    let map = args.map()?;
    let mut axes: Vec<(String, Vec<String>)> = match &args.preset {
        Some(name) if vary.is_empty() => preset(name)?.axes,
        _ => Vec::new(),
    };
    for v in vary {
        let Some((k, values)) = v.split_once('=') else {
            bail!("--vary expects KEY=V1,V2,..., got '{v}'");
        };
        axes.push((
            k.trim().to_string(),
            values.split(',').map(|s| s.trim().to_string()).collect(),
        ));
    }
    if axes.is_empty() {
        bail!("nothing to sweep: pass --vary or a preset with sweep axes");
    }
    let points = run_sweep(&map, &axes)?;
    let dir = args.out_dir()?;
    emit_sweep(
        &points,
        dir.map(|d| d.join("sweep.json")).as_deref(),
        dir.map(|d| d.join("sweep.csv")).as_deref(),
    )?;
    print!("{}", sweep_table(&points));
    if points.iter().all(|p| p.output.summary.n_trials == 0) {
        return Ok(EXIT_EMPTY);
    }
    Ok(0)
}

fn check_bounds(trace_path: &Path, args: &ConfigArgs) -> Result<u8> {
    let cfg = args.map()?.build()?;
    let trace = read_trace_csv(trace_path, cfg.calibration, cfg.algorithm)?;
    let report = evaluate_bounds(&trace, &bound_context(&cfg))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let failed = report.first_theorem_failure().is_some() || !report.iterate.holds;
    Ok(if failed { EXIT_VIOLATION } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Sweep { config, vary } => sweep(config, vary),
        Command::CheckBounds { trace, config } => check_bounds(trace, config),
        Command::Presets => {
            for name in PRESET_NAMES {
                let p = preset(name).expect("listed preset");
                println!("{name:<22} {}", p.description);
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::BoundViolation { .. }) => ExitCode::from(EXIT_VIOLATION),
                _ => ExitCode::from(EXIT_ERROR),
            }
        }
    }
}
