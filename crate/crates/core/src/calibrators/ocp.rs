//! Plain online gradient descent on the pinball loss, and its filtered variant.

use serde::{Deserialize, Serialize};

use super::{Calibrator, RoundGate};
use crate::conformal::{quantile_gradient, CalibrationConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpState {
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocpState {
    pub r: f64,
}

/// `r' = r − η(α − ē)`, trusting the observed indicator.
pub fn ocp_step(state: OcpState, e_obs: bool, cfg: &CalibrationConfig) -> OcpState {
    OcpState {
        r: state.r - cfg.eta * quantile_gradient(cfg.alpha, e_obs),
    }
}

/// Filtered update: outside `[0, B)` the true gradient is implied by the
/// threshold itself and the observed indicator is discarded.
pub fn frocp_step(state: FrocpState, e_obs: bool, cfg: &CalibrationConfig) -> FrocpState {
    FrocpState {
        r: state.r - cfg.eta * filtered_gradient(state.r, e_obs, cfg),
    }
}

/// Gradient used by the filtered rules: `α` above `B`, `α − 1` below 0, and
/// `α − ē` in range. The regime is read from the threshold before updating.
pub(crate) fn filtered_gradient(r: f64, e_obs: bool, cfg: &CalibrationConfig) -> f64 {
    if r >= cfg.score_bound {
        quantile_gradient(cfg.alpha, false)
    } else if r < 0.0 {
        quantile_gradient(cfg.alpha, true)
    } else {
        quantile_gradient(cfg.alpha, e_obs)
    }
}

/// Online conformal prediction fed with the (possibly corrupted) indicator.
#[derive(Debug, Clone)]
pub struct Ocp {
    cfg: CalibrationConfig,
    state: OcpState,
    gate: RoundGate,
}

impl Ocp {
    pub fn new(cfg: CalibrationConfig) -> Self {
        Self {
            cfg,
            state: OcpState { r: cfg.r_init },
            gate: RoundGate::default(),
        }
    }
}

impl Calibrator for Ocp {
    fn play(&mut self, t: usize) -> Result<f64> {
        self.gate.open(t)?;
        Ok(self.state.r)
    }

    fn feedback(&mut self, t: usize, e_obs: bool) -> Result<f64> {
        self.gate.close(t)?;
        self.state = ocp_step(self.state, e_obs, &self.cfg);
        Ok(0.0)
    }

    fn iterate(&self) -> f64 {
        self.state.r
    }
}

/// Filtering variant: infers the gradient whenever the threshold is out of range.
#[derive(Debug, Clone)]
pub struct Frocp {
    cfg: CalibrationConfig,
    state: FrocpState,
    gate: RoundGate,
}

impl Frocp {
    pub fn new(cfg: CalibrationConfig) -> Self {
        Self {
            cfg,
            state: FrocpState { r: cfg.r_init },
            gate: RoundGate::default(),
        }
    }
}

impl Calibrator for Frocp {
    fn play(&mut self, t: usize) -> Result<f64> {
        self.gate.open(t)?;
        Ok(self.state.r)
    }

    fn feedback(&mut self, t: usize, e_obs: bool) -> Result<f64> {
        self.gate.close(t)?;
        self.state = frocp_step(self.state, e_obs, &self.cfg);
        Ok(0.0)
    }

    fn iterate(&self) -> f64 {
        self.state.r
    }
}
