//! Elementary conformal primitives shared by every calibrator.
//!
//! A round carries the true label's non-conformity score `s_t ∈ [0, B]`. A
//! threshold `r` covers the round iff `s_t ≤ r`; the miscoverage indicator is
//! therefore `1{r < s_t}` (strict), and the prediction set contains every
//! candidate whose score is `≤ r` (weak).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used only when checking that a classification round's candidate
/// list contains the true score.
pub const CANDIDATE_MATCH_TOL: f64 = 1e-12;

/// Step-size, target rate and score range shared by all calibrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Target long-run miscoverage rate α.
    pub alpha: f64,
    /// Learning rate η.
    pub eta: f64,
    /// Upper bound B on every score.
    pub score_bound: f64,
    /// Initial threshold r_1 (and h_1 for the compensated calibrator).
    pub r_init: f64,
    /// Number of rounds T.
    pub horizon: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            eta: 0.05,
            score_bound: 1.0,
            r_init: 0.0,
            horizon: 10_000,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.score_bound.is_finite() && self.score_bound > 0.0) {
            return Err(Error::Config(format!(
                "score_bound must be positive, got {}",
                self.score_bound
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(0.0..=self.score_bound).contains(&self.r_init) {
            return Err(Error::Config(format!(
                "r_init must lie in [0, {}], got {}",
                self.score_bound, self.r_init
            )));
        }
        Ok(())
    }

    /// `(B + η) / (η T)`: the ideal-feedback miscoverage bound.
    pub fn base_term(&self) -> f64 {
        (self.score_bound + self.eta) / (self.eta * self.horizon as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Classification,
    Regression,
}

/// One round's true score plus, in classification mode, the scores of every
/// candidate label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundScore {
    /// 1-based round index.
    pub t: usize,
    pub s_true: f64,
    /// Candidate scores, kept sorted ascending so set sizes are a binary search.
    pub candidates: Option<Vec<f64>>,
    pub mode: Mode,
}

impl RoundScore {
    pub fn regression(t: usize, s_true: f64) -> Self {
        Self {
            t,
            s_true,
            candidates: None,
            mode: Mode::Regression,
        }
    }

    pub fn classification(t: usize, s_true: f64, mut candidates: Vec<f64>) -> Self {
        candidates.sort_unstable_by(f64::total_cmp);
        Self {
            t,
            s_true,
            candidates: Some(candidates),
            mode: Mode::Classification,
        }
    }

    /// Checks the score-range assumption and the candidate invariant.
    pub fn validate(&self, score_bound: f64) -> Result<()> {
        if !self.s_true.is_finite() || self.s_true < 0.0 || self.s_true > score_bound {
            return Err(Error::InvalidArgument(format!(
                "round {}: score {} outside [0, {}]",
                self.t, self.s_true, score_bound
            )));
        }
        if self.mode == Mode::Classification {
            let candidates = self
                .candidates
                .as_ref()
                .ok_or_else(|| Error::Config(format!("round {}: classification round without candidates", self.t)))?;
            if let Some(c) = candidates
                .iter()
                .find(|c| !c.is_finite() || **c < 0.0 || **c > score_bound)
            {
                return Err(Error::InvalidArgument(format!(
                    "round {}: candidate score {} outside [0, {}]",
                    self.t, c, score_bound
                )));
            }
            if !candidates
                .iter()
                .any(|c| (c - self.s_true).abs() <= CANDIDATE_MATCH_TOL)
            {
                return Err(Error::InvalidArgument(format!(
                    "round {}: no candidate equals the true score {}",
                    self.t, self.s_true
                )));
            }
        }
        Ok(())
    }
}

/// Miscoverage indicator `1{r < s}`.
pub fn coverage_indicator(r: f64, s: f64) -> Result<bool> {
    if !r.is_finite() || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite threshold or score (r={r}, s={s})"
        )));
    }
    Ok(r < s)
}

/// Subgradient of the pinball loss at level `1 - alpha`: `alpha - e`.
#[inline]
pub fn quantile_gradient(alpha: f64, e: bool) -> f64 {
    alpha - f64::from(u8::from(e))
}

/// Size of the prediction set `{y : S(x, y) ≤ r}`.
///
/// Classification counts candidate scores `≤ r`; regression reports the width
/// `2·max(r, 0)` of the symmetric interval around the point prediction.
pub fn prediction_set_size(round: &RoundScore, r: f64) -> Result<f64> {
    match round.mode {
        Mode::Regression => Ok(2.0 * r.max(0.0)),
        Mode::Classification => {
            let candidates = round
                .candidates
                .as_ref()
                .ok_or_else(|| Error::Config(format!("round {}: classification round without candidates", round.t)))?;
            Ok(candidates.partition_point(|c| *c <= r) as f64)
        }
    }
}

/// Per-step record of one trial, including the oracle-side fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Threshold used for the prediction set.
    pub r_played: f64,
    pub s_true: f64,
    pub e_true: bool,
    pub e_obs: bool,
    pub z: bool,
    pub set_size: f64,
    /// `0 ≤ r_played < B`.
    pub in_range: bool,
    pub is_training: bool,
    /// Internal iterate before this round's update (the hidden threshold for
    /// the compensated calibrator, `r_played` otherwise).
    pub iterate: f64,
    /// Prediction `q_t` actually applied by the compensation step; 0 when no
    /// compensation was applied.
    pub q: f64,
}

/// Full record of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: CalibrationConfig,
    pub steps: Vec<StepRecord>,
    /// Threshold (or hidden threshold) after the final update.
    pub r_final: f64,
    /// Final corruption-rate estimate of an estimating predictor, if any.
    pub p_hat: Option<f64>,
}

impl RunTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn q_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.q).collect()
    }

    /// Checks that steps run contiguously from 1 to T.
    pub fn check_contiguous(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if step.t != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "trace step {} carries round index {}",
                    i + 1,
                    step.t
                )));
            }
        }
        Ok(())
    }
}
