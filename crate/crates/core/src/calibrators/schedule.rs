use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounds on which the compensated calibrator probes with a boundary threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingSchedule {
    #[default]
    None,
    /// Rounds `1..=size`.
    Prefix { size: usize },
    /// Rounds `1, Δ+1, 2Δ+1, …`.
    Periodic { delta: usize },
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TrainingSchedule::Periodic { delta: 0 } => Err(Error::Config("periodic schedule needs delta >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn is_training(&self, t: usize) -> bool {
        match *self {
            TrainingSchedule::None => false,
            TrainingSchedule::Prefix { size } => t >= 1 && t <= size,
            TrainingSchedule::Periodic { delta } => t >= 1 && (t - 1).is_multiple_of(delta),
        }
    }

    /// `|P ∩ {1..T}|`.
    pub fn size_within(&self, horizon: usize) -> usize {
        match *self {
            TrainingSchedule::None => 0,
            TrainingSchedule::Prefix { size } => size.min(horizon),
            TrainingSchedule::Periodic { delta } => horizon.div_ceil(delta),
        }
    }

    /// 1-based position of `t` among the training rounds, if it is one.
    pub fn training_index(&self, t: usize) -> Option<usize> {
        if !self.is_training(t) {
            return None;
        }
        match *self {
            TrainingSchedule::None => None,
            TrainingSchedule::Prefix { .. } => Some(t),
            TrainingSchedule::Periodic { delta } => Some((t - 1) / delta + 1),
        }
    }

    /// Probe interval Δ for periodic schedules.
    pub fn delta(&self) -> Option<usize> {
        match *self {
            TrainingSchedule::Periodic { delta } => Some(delta),
            _ => None,
        }
    }
}

/// `⌈x⌉`, snapping values within 1e-9 of an integer to that integer so that
/// products such as `0.9 · 10` are not pushed up by representation error.
pub(crate) fn ceil_snapped(x: f64) -> usize {
    let nearest = x.round();
    let v = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    v.max(0.0) as usize
}

/// Number of full-set probes `⌈(1 − α)|P|⌉`.
pub fn full_set_probes(size_p: usize, alpha: f64) -> usize {
    ceil_snapped((1.0 - alpha) * size_p as f64).min(size_p)
}

/// Probe threshold for the `i`-th training round: `B` for the first
/// `⌈(1 − α)|P|⌉` probes and `0` afterwards.
pub fn training_threshold(i: usize, size_p: usize, alpha: f64, score_bound: f64) -> Result<f64> {
    if i == 0 || i > size_p {
        return Err(Error::InvalidArgument(format!(
            "training index {i} outside 1..={size_p}"
        )));
    }
    Ok(if i <= full_set_probes(size_p, alpha) {
        score_bound
    } else {
        0.0
    })
}

/// Flip indicator recovered on a probe round: the full set forces `e = 0`, the
/// empty set forces `e = 1`.
pub fn recover_z(i: usize, size_p: usize, alpha: f64, e_obs: bool) -> bool {
    if i <= full_set_probes(size_p, alpha) {
        e_obs
    } else {
        !e_obs
    }
}
