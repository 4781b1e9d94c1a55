//! Threshold-update state machines and the per-trial driver.
//!
//! Every calibrator follows a two-phase round: [`Calibrator::play`] yields the
//! threshold for round `t`, the caller evaluates coverage and passes the true
//! indicator through a corruption channel, and [`Calibrator::feedback`]
//! completes the round with the observed indicator. Calibrators never see the
//! score, the flip indicator, or the channel parameters.

mod acrocp;
mod ocp;
mod schedule;

use serde::{Deserialize, Serialize};

pub use acrocp::{acrocp_round, Acrocp, AcrocpParams, AcrocpRound, AcrocpState};
pub use ocp::{frocp_step, ocp_step, Frocp, FrocpState, Ocp, OcpState};
pub use schedule::{full_set_probes, recover_z, training_threshold, TrainingSchedule};

use crate::conformal::{coverage_indicator, prediction_set_size, CalibrationConfig, RoundScore, RunTrace, StepRecord};
use crate::corruption::{Channel, Feedback};
use crate::error::{Error, Result};
use crate::predictors::PredictorSpec;

pub trait Calibrator {
    /// Threshold to play on round `t`.
    fn play(&mut self, t: usize) -> Result<f64>;

    /// Completes round `t` with the observed indicator. Returns the prediction
    /// applied through compensation (0 when none was applied).
    fn feedback(&mut self, t: usize, e_obs: bool) -> Result<f64>;

    /// Internal iterate (`r_t`, or the hidden `h_t`).
    fn iterate(&self) -> f64;

    fn is_training(&self, _t: usize) -> bool {
        false
    }

    fn estimated_rate(&self) -> Option<f64> {
        None
    }
}

/// Tracks the open round so feedback cannot be applied to the wrong one.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RoundGate {
    last: usize,
    pending: Option<usize>,
}

impl RoundGate {
    pub(crate) fn open(&mut self, t: usize) -> Result<()> {
        if let Some(p) = self.pending {
            return Err(Error::Protocol(format!(
                "round {t} requested while round {p} awaits feedback"
            )));
        }
        if t <= self.last {
            return Err(Error::Protocol(format!(
                "round {t} requested after round {}",
                self.last
            )));
        }
        self.pending = Some(t);
        Ok(())
    }

    pub(crate) fn close(&mut self, t: usize) -> Result<()> {
        match self.pending {
            Some(p) if p == t => {
                self.pending = None;
                self.last = t;
                Ok(())
            }
            Some(p) => Err(Error::Protocol(format!(
                "feedback for round {t} while round {p} is open"
            ))),
            None => Err(Error::Protocol(format!(
                "feedback for round {t} without a played threshold"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Baseline fed with clean indicators; bypasses the channel.
    OcpIdeal,
    #[default]
    Ocp,
    Frocp,
    Acrocp,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::OcpIdeal => "ocp_ideal",
            Algorithm::Ocp => "ocp",
            Algorithm::Frocp => "frocp",
            Algorithm::Acrocp => "acrocp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ocp_ideal" => Ok(Algorithm::OcpIdeal),
            "ocp" => Ok(Algorithm::Ocp),
            "frocp" => Ok(Algorithm::Frocp),
            "acrocp" => Ok(Algorithm::Acrocp),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Everything needed to build a calibrator for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CalibratorSpec {
    pub algorithm: Algorithm,
    /// Probe schedule; only the compensated calibrator uses it.
    pub schedule: TrainingSchedule,
    pub predictor: PredictorSpec,
    /// Compensation bound `W`; defaults to the predictor family's bound.
    pub w_bound: Option<f64>,
}

impl CalibratorSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Default::default()
        }
    }

    pub fn acrocp(schedule: TrainingSchedule, predictor: PredictorSpec) -> Self {
        Self {
            algorithm: Algorithm::Acrocp,
            schedule,
            predictor,
            w_bound: None,
        }
    }

    /// Compensation bound in force for the compensated calibrator.
    pub fn effective_w_bound(&self) -> f64 {
        self.w_bound.unwrap_or_else(|| self.predictor.default_w_bound())
    }

    pub fn build(&self, cfg: CalibrationConfig) -> Result<Box<dyn Calibrator + Send>> {
        Ok(match self.algorithm {
            Algorithm::OcpIdeal | Algorithm::Ocp => Box::new(Ocp::new(cfg)),
            Algorithm::Frocp => Box::new(Frocp::new(cfg)),
            Algorithm::Acrocp => Box::new(Acrocp::from_spec(cfg, self.schedule, &self.predictor, self.w_bound)?),
        })
    }
}

/// Runs one trial over the first `horizon` rounds of `stream`.
///
/// The ideal baseline bypasses the channel (`z ≡ 0`). With the genie
/// predictor the harness hands the true flip to the compensated calibrator as
/// its prediction; no other path gives a calibrator oracle information.
pub fn run_calibrator(
    spec: &CalibratorSpec,
    stream: &[RoundScore],
    channel: &mut Channel,
    cfg: &CalibrationConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    spec.schedule.validate()?;
    if stream.len() < cfg.horizon {
        return Err(Error::Input(format!(
            "stream has {} rounds but the horizon is {}",
            stream.len(),
            cfg.horizon
        )));
    }
    let genie = spec.algorithm == Algorithm::Acrocp && spec.predictor == PredictorSpec::Genie;
    let mut acrocp = match spec.algorithm {
        Algorithm::Acrocp => Some(Acrocp::from_spec(*cfg, spec.schedule, &spec.predictor, spec.w_bound)?),
        _ => None,
    };
    let mut other = match spec.algorithm {
        Algorithm::Acrocp => None,
        _ => Some(spec.build(*cfg)?),
    };

    let mut steps = Vec::with_capacity(cfg.horizon);
    for (i, round) in stream[..cfg.horizon].iter().enumerate() {
        let t = i + 1;
        if !(0.0..=cfg.score_bound).contains(&round.s_true) {
            return Err(Error::Input(format!(
                "round {t}: score {} outside [0, {}]",
                round.s_true, cfg.score_bound
            )));
        }
        let cal: &mut dyn Calibrator = match (&mut acrocp, &mut other) {
            (Some(a), _) => a,
            (None, Some(o)) => o.as_mut(),
            (None, None) => unreachable!(),
        };
        let r = cal.play(t)?;
        let iterate = cal.iterate();
        let is_training = cal.is_training(t);
        let e_true = coverage_indicator(r, round.s_true)?;
        let fb = if spec.algorithm == Algorithm::OcpIdeal {
            Feedback {
                e_obs: e_true,
                z: false,
            }
        } else {
            channel.corrupt(e_true, t)
        };
        let q = match (&mut acrocp, &mut other) {
            (Some(a), _) if genie => a.feedback_with_prediction(t, fb.e_obs, Some(f64::from(u8::from(fb.z))))?,
            (Some(a), _) => a.feedback(t, fb.e_obs)?,
            (None, Some(o)) => o.feedback(t, fb.e_obs)?,
            (None, None) => unreachable!(),
        };
        steps.push(StepRecord {
            t,
            r_played: r,
            s_true: round.s_true,
            e_true,
            e_obs: fb.e_obs,
            z: fb.z,
            set_size: prediction_set_size(round, r)?,
            in_range: (0.0..cfg.score_bound).contains(&r),
            is_training,
            iterate,
            q,
        });
    }
    let (r_final, p_hat) = match (&acrocp, &other) {
        (Some(a), _) => (a.iterate(), a.estimated_rate()),
        (None, Some(o)) => (o.iterate(), o.estimated_rate()),
        (None, None) => unreachable!(),
    };
    Ok(RunTrace {
        config: *cfg,
        steps,
        r_final,
        p_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::ChannelSpec;

    fn constant_stream(s: f64, n: usize) -> Vec<RoundScore> {
        (1..=n).map(|t| RoundScore::regression(t, s)).collect()
    }

    /// Exact unroll of the ideal update in integer hundredths: r starts at 50,
    /// alpha = 1/2, eta = 1/10, so each step moves r by ±5.
    fn hundredths_oracle(r0: i64, s: i64, steps: usize) -> (Vec<bool>, Vec<i64>) {
        let (mut r, mut es, mut rs) = (r0, Vec::new(), Vec::new());
        for _ in 0..steps {
            rs.push(r);
            let e = r < s;
            es.push(e);
            r += if e { 5 } else { -5 };
        }
        (es, rs)
    }

    #[test]
    fn ideal_constant_stream_matches_exact_unroll() {
        let cfg = CalibrationConfig {
            alpha: 0.5,
            eta: 0.1,
            score_bound: 1.0,
            r_init: 0.5,
            horizon: 4,
        };
        let (es, rs) = hundredths_oracle(50, 50, 4);
        let mut ch = Channel::new(ChannelSpec::Ideal, 0).unwrap();
        let trace = run_calibrator(
            &CalibratorSpec::new(Algorithm::OcpIdeal),
            &constant_stream(0.5, 4),
            &mut ch,
            &cfg,
        )
        .unwrap();
        let got_e: Vec<bool> = trace.steps.iter().map(|s| s.e_true).collect();
        assert_eq!(got_e, es);
        assert_eq!(got_e, vec![false, true, false, true]);
        for (step, r) in trace.steps.iter().zip(rs) {
            assert!((step.r_played - r as f64 / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ocp_with_clean_channel_equals_ideal() {
        let cfg = CalibrationConfig {
            horizon: 300,
            ..Default::default()
        };
        let stream: Vec<RoundScore> = (1..=300)
            .map(|t| RoundScore::regression(t, ((t * 37) % 101) as f64 / 100.0))
            .collect();
        let mut ch = Channel::new(ChannelSpec::Iid { p: 0.0 }, 1).unwrap();
        let a = run_calibrator(&CalibratorSpec::new(Algorithm::Ocp), &stream, &mut ch, &cfg).unwrap();
        let mut ch = Channel::new(ChannelSpec::Ideal, 1).unwrap();
        let b = run_calibrator(&CalibratorSpec::new(Algorithm::OcpIdeal), &stream, &mut ch, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frocp_under_total_corruption_stays_bounded() {
        // z ≡ 1: every indicator reaches the calibrator flipped.
        let cfg = CalibrationConfig {
            alpha: 0.1,
            eta: 0.2,
            score_bound: 1.0,
            r_init: 0.9,
            horizon: 20,
        };
        let mut cal = Frocp::new(cfg);
        for t in 1..=20 {
            let r = cal.play(t).unwrap();
            assert!((-0.02 - 1e-12..=1.18 + 1e-12).contains(&r), "r={r}");
            let e = r < 0.5;
            cal.feedback(t, !e).unwrap();
        }
        let r = cal.iterate();
        assert!((-0.02 - 1e-12..=1.18 + 1e-12).contains(&r));
    }

    #[test]
    fn short_stream_is_input_error() {
        let cfg = CalibrationConfig {
            horizon: 10,
            ..Default::default()
        };
        let mut ch = Channel::new(ChannelSpec::Ideal, 0).unwrap();
        assert!(matches!(
            run_calibrator(
                &CalibratorSpec::new(Algorithm::Ocp),
                &constant_stream(0.5, 9),
                &mut ch,
                &cfg
            ),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn acrocp_prefix_round_one_probes_full_set() {
        let cfg = CalibrationConfig {
            horizon: 20,
            ..Default::default()
        };
        let spec = CalibratorSpec::acrocp(TrainingSchedule::Prefix { size: 10 }, PredictorSpec::default());
        let mut ch = Channel::new(ChannelSpec::Iid { p: 0.2 }, 4).unwrap();
        let trace = run_calibrator(&spec, &constant_stream(0.3, 20), &mut ch, &cfg).unwrap();
        assert_eq!(trace.steps[0].r_played, 1.0);
        assert!(trace.steps[0].is_training);
        assert_eq!(trace.steps[9].r_played, 0.0);
        assert!(!trace.steps[10].is_training);
        assert_eq!(trace.steps[10].r_played, 0.0);
        assert!(trace.p_hat.is_some());
    }
}
