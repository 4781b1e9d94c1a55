//! Experiment configuration in flat `key=value` form with dotted sections.
//!
//! ```text
//! # comments and blank lines are ignored
//! calibration.alpha = 0.1
//! algorithm = acrocp
//! channel.kind = iid
//! channel.p = 0.2
//! predictor.kind = kt
//! ```
//!
//! Later assignments override earlier ones, which is how command-line
//! overrides take precedence over a file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stream::{Generator, StreamSource, StreamSpec};
use crate::analysis::CorollaryId;
use crate::calibrators::{Algorithm, CalibratorSpec, TrainingSchedule};
use crate::conformal::{CalibrationConfig, Mode};
use crate::corruption::{symmetric_transition_for_memory, BudgetPolicy, ChannelSpec};
use crate::error::{Error, Result};
use crate::predictors::{PredictorSpec, DEFAULT_KT_GAMMA};

/// Training-set size used when a compensated run names no schedule.
pub const DEFAULT_PREFIX_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Per-step CSV of one trial.
    pub trace_path: Option<PathBuf>,
    /// Which trial the trace CSV records.
    pub trace_trial: usize,
    pub summary_path: Option<PathBuf>,
    /// Corollaries evaluated on every trial.
    pub bounds: Vec<CorollaryId>,
    /// Confidence level δ for the high-probability corollaries.
    pub confidence_delta: f64,
    /// Keep every `stride`-th step in the per-step summary arrays.
    pub stride: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trace_path: None,
            trace_trial: 0,
            summary_path: None,
            bounds: Vec::new(),
            confidence_delta: 0.05,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub calibration: CalibrationConfig,
    pub algorithm: Algorithm,
    pub channel: ChannelSpec,
    pub schedule: TrainingSchedule,
    pub predictor: PredictorSpec,
    /// Compensation bound override; the predictor's default otherwise.
    pub w_bound: Option<f64>,
    pub stream: StreamSpec,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core. Not echoed in
    /// summaries, which are identical at every thread count.
    #[serde(skip)]
    pub parallelism: usize,
    pub outputs: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationConfig::default(),
            algorithm: Algorithm::Ocp,
            channel: ChannelSpec::Ideal,
            schedule: TrainingSchedule::Prefix {
                size: DEFAULT_PREFIX_SIZE,
            },
            predictor: PredictorSpec::default(),
            w_bound: None,
            stream: StreamSpec::default(),
            n_trials: 1000,
            base_seed: 0,
            parallelism: 0,
            outputs: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn calibrator_spec(&self) -> CalibratorSpec {
        CalibratorSpec {
            algorithm: self.algorithm,
            schedule: self.schedule,
            predictor: self.predictor,
            w_bound: self.w_bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        self.channel.validate()?;
        self.schedule.validate()?;
        self.predictor.validate()?;
        self.stream.validate()?;
        if let Some(w) = self.w_bound {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("predictor.w_bound must be >= 0, got {w}")));
            }
        }
        if self.outputs.stride == 0 {
            return Err(Error::Config("outputs.stride must be >= 1".into()));
        }
        let d = self.outputs.confidence_delta;
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Config(format!(
                "outputs.confidence_delta must lie in (0,1), got {d}"
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        ConfigMap::parse(text)?.build()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ConfigMap::from_file(path)?.build()
    }
}

/// Raw assignments, kept until every override has been applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            map.set(k, v.trim());
        }
        Ok(map)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut r = Reader {
            map: self.entries.clone(),
        };
        let d = ExperimentConfig::default();

        let calibration = CalibrationConfig {
            alpha: r.num("calibration.alpha")?.unwrap_or(d.calibration.alpha),
            eta: r.num("calibration.eta")?.unwrap_or(d.calibration.eta),
            score_bound: r.num("calibration.score_bound")?.unwrap_or(d.calibration.score_bound),
            r_init: r.num("calibration.r_init")?.unwrap_or(d.calibration.r_init),
            horizon: r.num("calibration.horizon")?.unwrap_or(d.calibration.horizon),
        };
        let algorithm = match r.take("algorithm") {
            Some(s) => Algorithm::parse(&s)?,
            None => d.algorithm,
        };

        let channel = match r.take("channel.kind").as_deref() {
            None | Some("ideal") => ChannelSpec::Ideal,
            Some("iid") => ChannelSpec::Iid {
                p: r.require("channel.p")?,
            },
            Some("markov") => match r.num::<f64>("channel.memory")? {
                Some(m) => {
                    if !(m >= 0.5) {
                        return Err(Error::Config(format!("channel.memory must be >= 0.5, got {m}")));
                    }
                    let p = symmetric_transition_for_memory(m);
                    ChannelSpec::Markov { p01: p, p10: p }
                }
                None => ChannelSpec::Markov {
                    p01: r.require("channel.p01")?,
                    p10: r.require("channel.p10")?,
                },
            },
            Some("budget") => ChannelSpec::Budget {
                delta: r.require("channel.delta")?,
                f_budget: r.require("channel.f_budget")?,
                policy: match r.take("channel.policy").as_deref() {
                    None | Some("burst") => BudgetPolicy::Burst,
                    Some("greedy_drift") => BudgetPolicy::GreedyDrift,
                    Some(other) => return Err(Error::Config(format!("unknown channel.policy '{other}'"))),
                },
            },
            Some(other) => return Err(Error::Config(format!("unknown channel.kind '{other}'"))),
        };

        let schedule = match r.take("schedule.kind").as_deref() {
            None => d.schedule,
            Some("none") => TrainingSchedule::None,
            Some("prefix") => TrainingSchedule::Prefix {
                size: r.require("schedule.size")?,
            },
            Some("periodic") => TrainingSchedule::Periodic {
                delta: r.require("schedule.delta")?,
            },
            Some(other) => return Err(Error::Config(format!("unknown schedule.kind '{other}'"))),
        };

        let predictor = match r.take("predictor.kind").as_deref() {
            None => d.predictor,
            Some("zero") => PredictorSpec::Zero,
            Some("oracle") => PredictorSpec::Oracle {
                p: match r.num("predictor.p")? {
                    Some(p) => p,
                    None => channel
                        .flip_rate()
                        .ok_or_else(|| Error::Config("oracle predictor needs predictor.p for this channel".into()))?,
                },
            },
            Some("kt") => PredictorSpec::Kt {
                gamma: r.num("predictor.gamma")?.unwrap_or(DEFAULT_KT_GAMMA),
            },
            Some("sense_hold") => PredictorSpec::SenseHold,
            Some("genie") => PredictorSpec::Genie,
            Some(other) => return Err(Error::Config(format!("unknown predictor.kind '{other}'"))),
        };
        let w_bound = r.num("predictor.w_bound")?;

        let source = match r.take("stream.source").as_deref() {
            None | Some("synthetic") => StreamSource::Synthetic,
            Some("file") => StreamSource::File,
            Some(other) => return Err(Error::Config(format!("unknown stream.source '{other}'"))),
        };
        let path = r.take("stream.path").map(PathBuf::from);
        let generator = match r.take("stream.generator").as_deref() {
            None | Some("uniform") => Generator::Uniform,
            Some("beta") => Generator::Beta {
                a: r.require("stream.a")?,
                b: r.require("stream.b")?,
            },
            Some("gaussian_clipped") => Generator::GaussianClipped {
                mean: r.require("stream.mean")?,
                std: r.require("stream.std")?,
            },
            Some("classification_softmax_like") => Generator::ClassificationSoftmaxLike {
                logit_std: r.num("stream.logit_std")?.unwrap_or(1.0),
                boost: r.num("stream.boost")?.unwrap_or(5.0),
            },
            Some(other) => return Err(Error::Config(format!("unknown stream.generator '{other}'"))),
        };
        let default_mode = StreamSpec::synthetic(generator).mode;
        let mode = match r.take("stream.mode").as_deref() {
            None => default_mode,
            Some("classification") => Mode::Classification,
            Some("regression") => Mode::Regression,
            Some(other) => return Err(Error::Config(format!("unknown stream.mode '{other}'"))),
        };
        let stream = StreamSpec {
            source,
            path,
            generator,
            mode,
            n_candidates: r.num("stream.n_candidates")?.unwrap_or(d.stream.n_candidates),
        };

        let bounds = match r.take("outputs.bounds") {
            None => Vec::new(),
            Some(list) => list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(CorollaryId::parse)
                .collect::<Result<Vec<_>>>()?,
        };
        let outputs = OutputSpec {
            trace_path: r.take("outputs.trace_path").map(PathBuf::from),
            trace_trial: r.num("outputs.trace_trial")?.unwrap_or(0),
            summary_path: r.take("outputs.summary_path").map(PathBuf::from),
            bounds,
            confidence_delta: r.num("outputs.confidence_delta")?.unwrap_or(d.outputs.confidence_delta),
            stride: r.num("outputs.stride")?.unwrap_or(d.outputs.stride),
        };

        let cfg = ExperimentConfig {
            calibration,
            algorithm,
            channel,
            schedule,
            predictor,
            w_bound,
            stream,
            n_trials: r.num("n_trials")?.unwrap_or(d.n_trials),
            base_seed: r.num("base_seed")?.unwrap_or(d.base_seed),
            parallelism: r.num("parallelism")?.unwrap_or(d.parallelism),
            outputs,
        };
        if let Some(k) = r.map.keys().next() {
            return Err(Error::Config(format!("unknown or unused key '{k}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.num(key)?
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_text() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn full_example() {
        let text = "
            # iid corruption with a KT predictor
            calibration.alpha = 0.2
            calibration.horizon = 500
            algorithm = acrocp
            channel.kind = iid
            channel.p = 0.2
            schedule.kind = periodic
            schedule.delta = 10
            predictor.kind = kt
            predictor.gamma = 0.4
            stream.generator = beta
            stream.a = 2
            stream.b = 5
            n_trials = 7
            outputs.bounds = c31, c51
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.calibration.alpha, 0.2);
        assert_eq!(cfg.calibration.horizon, 500);
        assert_eq!(cfg.algorithm, Algorithm::Acrocp);
        assert_eq!(cfg.channel, ChannelSpec::Iid { p: 0.2 });
        assert_eq!(cfg.schedule, TrainingSchedule::Periodic { delta: 10 });
        assert_eq!(cfg.predictor, PredictorSpec::Kt { gamma: 0.4 });
        assert_eq!(cfg.stream.generator, Generator::Beta { a: 2.0, b: 5.0 });
        assert_eq!(cfg.n_trials, 7);
        assert_eq!(cfg.outputs.bounds, vec![CorollaryId::C31, CorollaryId::C51]);
    }

    #[test]
    fn later_assignment_wins() {
        let mut map = ConfigMap::parse("calibration.alpha=0.2\nchannel.kind=iid\nchannel.p=0.1").unwrap();
        map.assign("calibration.alpha=0.05").unwrap();
        map.assign("channel.p = 0.3").unwrap();
        let cfg = map.build().unwrap();
        assert_eq!(cfg.calibration.alpha, 0.05);
        assert_eq!(cfg.channel, ChannelSpec::Iid { p: 0.3 });
    }

    #[test]
    fn markov_memory_is_symmetric() {
        let cfg = ExperimentConfig::parse("channel.kind=markov\nchannel.memory=100").unwrap();
        assert_eq!(cfg.channel, ChannelSpec::Markov { p01: 0.005, p10: 0.005 });
    }

    #[test]
    fn oracle_defaults_to_channel_rate() {
        let cfg = ExperimentConfig::parse("channel.kind=iid\nchannel.p=0.2\npredictor.kind=oracle").unwrap();
        assert_eq!(cfg.predictor, PredictorSpec::Oracle { p: 0.2 });
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ExperimentConfig::parse("nonsense"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(ExperimentConfig::parse("\nfoo.bar=1"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::parse("channel.kind=iid"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("channel.kind=iid\nchannel.p=0.7"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("calibration.eta=abc"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("algorithm=sgd"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("outputs.bounds=c77"),
            Err(Error::Config(_))
        ));
        // a parameter for a channel that is not selected is unused
        assert!(matches!(
            ExperimentConfig::parse("channel.p=0.2"),
            Err(Error::Config(_))
        ));
    }
}
