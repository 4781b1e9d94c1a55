//! Score streams: synthetic generators and CSV ingestion.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conformal::{Mode, RoundScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    #[default]
    Synthetic,
    File,
}

/// Synthetic score generators. Every generator emits scores in `[0, B]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `B·U` with `U ~ Uniform[0, 1)`.
    #[default]
    Uniform,
    /// `B·X` with `X ~ Beta(a, b)`.
    Beta { a: f64, b: f64 },
    /// `min(|N(mean, std²)|, B)`.
    GaussianClipped { mean: f64, std: f64 },
    /// A calibrated classifier over `n_candidates` labels: logits are
    /// `N(0, logit_std²)` with `boost` added to one label, the true label is
    /// drawn from the softmax, and each label scores `B·(1 − prob)`.
    ClassificationSoftmaxLike { logit_std: f64, boost: f64 },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Uniform => "uniform",
            Generator::Beta { .. } => "beta",
            Generator::GaussianClipped { .. } => "gaussian_clipped",
            Generator::ClassificationSoftmaxLike { .. } => "classification_softmax_like",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub source: StreamSource,
    pub path: Option<PathBuf>,
    pub generator: Generator,
    pub mode: Mode,
    /// Labels per round for classification synthesis.
    pub n_candidates: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            source: StreamSource::Synthetic,
            path: None,
            generator: Generator::Uniform,
            mode: Mode::Regression,
            n_candidates: 100,
        }
    }
}

impl StreamSpec {
    pub fn synthetic(generator: Generator) -> Self {
        let mode = match generator {
            Generator::ClassificationSoftmaxLike { .. } => Mode::Classification,
            _ => Mode::Regression,
        };
        Self {
            generator,
            mode,
            ..Default::default()
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            source: StreamSource::File,
            path: Some(path.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == StreamSource::File {
            return match self.path {
                Some(_) => Ok(()),
                None => Err(Error::Config("file stream needs stream.path".into())),
            };
        }
        let classification = matches!(self.generator, Generator::ClassificationSoftmaxLike { .. });
        if classification != (self.mode == Mode::Classification) {
            return Err(Error::Config(format!(
                "generator {} does not produce {:?} rounds",
                self.generator.name(),
                self.mode
            )));
        }
        match self.generator {
            Generator::Uniform => Ok(()),
            Generator::Beta { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            Generator::Beta { a, b } => Err(Error::Config(format!("beta needs a, b > 0, got ({a}, {b})"))),
            Generator::GaussianClipped { mean, std } if mean.is_finite() && std > 0.0 => Ok(()),
            Generator::GaussianClipped { std, .. } => Err(Error::Config(format!("gaussian needs std > 0, got {std}"))),
            Generator::ClassificationSoftmaxLike { logit_std, boost } => {
                if self.n_candidates < 2 {
                    Err(Error::Config("classification needs at least 2 candidates".into()))
                } else if !(logit_std >= 0.0 && boost.is_finite()) {
                    Err(Error::Config(format!(
                        "softmax generator needs logit_std >= 0 and finite boost, got ({logit_std}, {boost})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Deterministic synthetic stream of `horizon` rounds (ChaCha8, stream 0).
pub fn synth_stream(spec: &StreamSpec, seed: u64, horizon: usize, score_bound: f64) -> Result<Vec<RoundScore>> {
    spec.validate()?;
    if spec.source != StreamSource::Synthetic {
        return Err(Error::Config("synth_stream needs a synthetic stream spec".into()));
    }
    if !(score_bound > 0.0 && score_bound.is_finite()) {
        return Err(Error::Config(format!(
            "score bound must be positive, got {score_bound}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = score_bound;
    let rounds = match spec.generator {
        Generator::Uniform => (1..=horizon)
            .map(|t| RoundScore::regression(t, b * rng.random::<f64>()))
            .collect(),
        Generator::Beta { a, b: shape_b } => {
            let d = Beta::new(a, shape_b).map_err(|e| Error::Config(format!("beta: {e}")))?;
            (1..=horizon)
                .map(|t| RoundScore::regression(t, b * d.sample(&mut rng)))
                .collect()
        }
        Generator::GaussianClipped { mean, std } => {
            let d = Normal::new(mean, std).map_err(|e| Error::Config(format!("gaussian: {e}")))?;
            (1..=horizon)
                .map(|t| RoundScore::regression(t, d.sample(&mut rng).abs().min(b)))
                .collect()
        }
        Generator::ClassificationSoftmaxLike { logit_std, boost } => {
            let normal = Normal::new(0.0, logit_std).map_err(|e| Error::Config(format!("softmax: {e}")))?;
            let k = spec.n_candidates;
            let mut probs = vec![0.0; k];
            (1..=horizon)
                .map(|t| {
                    let top = rng.random_range(0..k);
                    let mut max = f64::NEG_INFINITY;
                    for (j, p) in probs.iter_mut().enumerate() {
                        *p = normal.sample(&mut rng) + if j == top { boost } else { 0.0 };
                        max = max.max(*p);
                    }
                    let mut total = 0.0;
                    for p in probs.iter_mut() {
                        *p = (*p - max).exp();
                        total += *p;
                    }
                    let u = rng.random::<f64>() * total;
                    let (mut acc, mut label) = (0.0, k - 1);
                    for (j, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            label = j;
                            break;
                        }
                    }
                    let scores: Vec<f64> = probs.iter().map(|p| b * (1.0 - p / total)).collect();
                    RoundScore::classification(t, scores[label], scores)
                })
                .collect()
        }
    };
    Ok(rounds)
}

/// Reads a score stream from CSV.
///
/// The header must name `t` and `s_true` (`s` is accepted for the latter);
/// columns `c1..cK` carry candidate scores and make the stream a
/// classification stream. Other columns are ignored, so a trace CSV written
/// by [`emit_outputs`](super::emit_outputs) loads back as its score column.
pub fn load_stream(spec: &StreamSpec, score_bound: f64) -> Result<Vec<RoundScore>> {
    let path = spec
        .path
        .as_deref()
        .ok_or_else(|| Error::Config("file stream needs stream.path".into()))?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_stream(file, path, score_bound)
}

fn read_stream(reader: impl std::io::Read, path: &Path, score_bound: f64) -> Result<Vec<RoundScore>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| Error::Parse {
        line: 1,
        message: "header lacks a 't' column".into(),
    })?;
    let s_col = col("s_true").or_else(|| col("s")).ok_or_else(|| Error::Parse {
        line: 1,
        message: "header lacks an 's_true' column".into(),
    })?;
    let mut cand_cols = Vec::new();
    for k in 1.. {
        match col(&format!("c{k}")) {
            Some(i) => cand_cols.push(i),
            None => break,
        }
    }

    let mut rounds = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let row = row + 1;
        let record = record.map_err(|e| csv_error(e, path))?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {name}"),
            })
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i, name)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {name}: '{raw}' is not a number"),
            })
        };
        let t_raw = field(t_col, "t")?;
        let t = t_raw.parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("column t: '{t_raw}' is not a round index"),
        })?;
        let s = num(s_col, "s_true")?;
        let round = if cand_cols.is_empty() {
            RoundScore::regression(t, s)
        } else {
            let cands = cand_cols
                .iter()
                .enumerate()
                .map(|(k, &i)| num(i, &format!("c{}", k + 1)))
                .collect::<Result<Vec<_>>>()?;
            RoundScore::classification(t, s, cands)
        };
        round.validate(score_bound).map_err(|e| Error::Ingestion {
            row,
            message: match e {
                Error::InvalidArgument(m) | Error::Config(m) => m,
                other => other.to_string(),
            },
        })?;
        rounds.push(round);
    }
    Ok(rounds)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}
