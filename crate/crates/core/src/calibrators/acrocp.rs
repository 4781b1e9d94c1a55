//! Active-compensation calibrator.
//!
//! Non-training rounds play the hidden threshold `h` and update it with the
//! filtered rule, adding the compensation `w = (2ē − 1)·q` in range. Training
//! rounds play a boundary probe (`B` or `0`), recover the true flip from the
//! forced indicator, train the predictor and leave `h` untouched.

use serde::{Deserialize, Serialize};

use super::schedule::{recover_z, training_threshold, TrainingSchedule};
use super::{Calibrator, RoundGate};
use crate::conformal::{quantile_gradient, CalibrationConfig};
use crate::error::{Error, Result};
use crate::predictors::{compensation, estimated_rate, predict_q, predictor_train, PredictorSpec, PredictorState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrocpState {
    /// Hidden threshold.
    pub h: f64,
    /// Training rounds consumed so far.
    pub train_count: usize,
    pub predictor: PredictorState,
}

/// Outcome of completing one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrocpRound {
    pub r_played: f64,
    pub state: AcrocpState,
    /// Prediction applied through the compensation term, 0 if none.
    pub q_applied: f64,
}

/// Parameters fixed for the lifetime of one calibrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrocpParams {
    pub cfg: CalibrationConfig,
    pub schedule: TrainingSchedule,
    /// `|P ∩ {1..T}|`.
    pub size_p: usize,
    /// Compensation bound `W`.
    pub w_bound: f64,
}

impl AcrocpParams {
    pub fn new(cfg: CalibrationConfig, schedule: TrainingSchedule, w_bound: f64) -> Self {
        Self {
            cfg,
            schedule,
            size_p: schedule.size_within(cfg.horizon),
            w_bound,
        }
    }

    /// Threshold played at round `t` given the state before the round.
    pub fn threshold_for(&self, state: &AcrocpState, t: usize) -> Result<f64> {
        if self.schedule.is_training(t) {
            training_threshold(state.train_count + 1, self.size_p, self.cfg.alpha, self.cfg.score_bound)
        } else {
            Ok(state.h)
        }
    }
}

/// Completes round `t` given the observed indicator for the threshold this
/// round plays. `q_override` replaces the predictor's output (oracle-side use).
pub fn acrocp_round(
    state: AcrocpState,
    t: usize,
    e_obs: bool,
    params: &AcrocpParams,
    q_override: Option<f64>,
) -> Result<AcrocpRound> {
    let cfg = &params.cfg;
    let r_played = params.threshold_for(&state, t)?;
    if params.schedule.is_training(t) {
        let i = state.train_count + 1;
        let z = recover_z(i, params.size_p, cfg.alpha, e_obs);
        return Ok(AcrocpRound {
            r_played,
            state: AcrocpState {
                h: state.h,
                train_count: i,
                predictor: predictor_train(state.predictor, z),
            },
            q_applied: 0.0,
        });
    }

    let h = state.h;
    let (step, q_applied) = if h >= cfg.score_bound {
        (quantile_gradient(cfg.alpha, false), 0.0)
    } else if h < 0.0 {
        (quantile_gradient(cfg.alpha, true), 0.0)
    } else {
        let q = match q_override {
            Some(q) => q,
            None => predict_q(&state.predictor)?,
        };
        let w = compensation(e_obs, q, params.w_bound);
        // (2ē − 1)² = 1, so the applied prediction is recovered exactly.
        let q_eff = if e_obs { w } else { -w };
        (quantile_gradient(cfg.alpha, e_obs) + w, q_eff)
    };
    Ok(AcrocpRound {
        r_played,
        state: AcrocpState {
            h: h - cfg.eta * step,
            ..state
        },
        q_applied,
    })
}

/// Stateful wrapper enforcing the play-then-feedback protocol.
#[derive(Debug, Clone)]
pub struct Acrocp {
    params: AcrocpParams,
    state: AcrocpState,
    gate: RoundGate,
}

impl Acrocp {
    pub fn new(
        cfg: CalibrationConfig,
        schedule: TrainingSchedule,
        predictor: PredictorState,
        w_bound: f64,
    ) -> Result<Self> {
        schedule.validate()?;
        if !(w_bound >= 0.0) {
            return Err(Error::Config(format!("compensation bound must be >= 0, got {w_bound}")));
        }
        Ok(Self {
            params: AcrocpParams::new(cfg, schedule, w_bound),
            state: AcrocpState {
                h: cfg.r_init,
                train_count: 0,
                predictor,
            },
            gate: RoundGate::default(),
        })
    }

    pub fn from_spec(
        cfg: CalibrationConfig,
        schedule: TrainingSchedule,
        predictor: &PredictorSpec,
        w_bound: Option<f64>,
    ) -> Result<Self> {
        predictor.validate()?;
        Self::new(
            cfg,
            schedule,
            predictor.initial_state(),
            w_bound.unwrap_or_else(|| predictor.default_w_bound()),
        )
    }

    pub fn state(&self) -> &AcrocpState {
        &self.state
    }

    pub fn params(&self) -> &AcrocpParams {
        &self.params
    }

    /// Completes the pending round with an externally supplied prediction.
    pub fn feedback_with_prediction(&mut self, t: usize, e_obs: bool, q: Option<f64>) -> Result<f64> {
        self.gate.close(t)?;
        let out = acrocp_round(self.state, t, e_obs, &self.params, q)?;
        self.state = out.state;
        Ok(out.q_applied)
    }
}

impl Calibrator for Acrocp {
    fn play(&mut self, t: usize) -> Result<f64> {
        let r = self.params.threshold_for(&self.state, t)?;
        self.gate.open(t)?;
        Ok(r)
    }

    fn feedback(&mut self, t: usize, e_obs: bool) -> Result<f64> {
        self.feedback_with_prediction(t, e_obs, None)
    }

    fn iterate(&self) -> f64 {
        self.state.h
    }

    fn is_training(&self, t: usize) -> bool {
        self.params.schedule.is_training(t)
    }

    fn estimated_rate(&self) -> Option<f64> {
        estimated_rate(&self.state.predictor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CalibrationConfig {
        CalibrationConfig {
            alpha: 0.1,
            eta: 0.05,
            score_bound: 1.0,
            r_init: 0.0,
            horizon: 100,
        }
    }

    #[test]
    fn training_round_probes_and_freezes_h() {
        let params = AcrocpParams::new(cfg(), TrainingSchedule::Prefix { size: 10 }, 4.5);
        let state = AcrocpState {
            h: 0.3,
            train_count: 0,
            predictor: PredictorState::Kt {
                sum: 0.0,
                count: 0,
                gamma: 0.45,
            },
        };
        let out = acrocp_round(state, 1, true, &params, None).unwrap();
        assert_eq!(out.r_played, 1.0);
        assert_eq!(out.state.h, 0.3);
        assert_eq!(out.state.train_count, 1);
        // full-set probe observed as miscovered means a flip
        assert_eq!(
            out.state.predictor,
            PredictorState::Kt {
                sum: 1.0,
                count: 1,
                gamma: 0.45
            }
        );
    }

    #[test]
    fn compensated_in_range_update() {
        let params = AcrocpParams::new(cfg(), TrainingSchedule::None, 0.125);
        let state = AcrocpState {
            h: 0.5,
            train_count: 0,
            predictor: PredictorState::Oracle { p: 0.1 },
        };
        let out = acrocp_round(state, 5, true, &params, None).unwrap();
        assert_eq!(out.r_played, 0.5);
        assert!((out.state.h - 0.55125).abs() < 1e-12);
        assert!((out.q_applied + 0.125).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_ignores_feedback_and_compensation() {
        let params = AcrocpParams::new(cfg(), TrainingSchedule::None, 0.125);
        for e in [false, true] {
            let state = AcrocpState {
                h: 1.2,
                train_count: 0,
                predictor: PredictorState::Oracle { p: 0.1 },
            };
            let out = acrocp_round(state, 5, e, &params, None).unwrap();
            assert!((out.state.h - 1.195).abs() < 1e-12);
            assert_eq!(out.q_applied, 0.0);
            let low = AcrocpState { h: -0.01, ..state };
            let out = acrocp_round(low, 5, e, &params, None).unwrap();
            assert!((out.state.h - 0.035).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_mismatch() {
        let mut cal = Acrocp::from_spec(
            cfg(),
            TrainingSchedule::Prefix { size: 5 },
            &PredictorSpec::default(),
            None,
        )
        .unwrap();
        assert_eq!(cal.play(1).unwrap(), 1.0);
        assert!(matches!(cal.feedback(2, false), Err(Error::Protocol(_))));
        cal.feedback(1, false).unwrap();
    }

    #[test]
    fn training_mass_matches_floor_alpha_p() {
        let size = 37;
        let c = CalibrationConfig { alpha: 0.15, ..cfg() };
        let mut cal = Acrocp::from_spec(c, TrainingSchedule::Prefix { size }, &PredictorSpec::SenseHold, None).unwrap();
        let mut miscovered = 0;
        for t in 1..=size {
            let r = cal.play(t).unwrap();
            // any valid score in [0, B], choose one that is not the boundary
            let e = r < 0.5;
            miscovered += usize::from(e);
            cal.feedback(t, e).unwrap();
        }
        assert_eq!(miscovered, (0.15f64 * size as f64).floor() as usize);
    }
}
