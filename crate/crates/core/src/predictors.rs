//! Corruption predictors `q_t` and the compensation term `w_t(q_t)`.
//!
//! The compensated calibrator adds `w = (2ē − 1)·q` to the observed gradient
//! on in-range rounds. If `q` were the true flip indicator `z` this would
//! restore the clean gradient exactly, since `g − ḡ = ē − e = (2ē − 1)·z`.
//!
//! For i.i.d. flips with rate `p` the mean-optimal prediction is
//! `q* = p / (2p − 1)`, which is negative on `p ∈ (0, 0.5)`: the expected
//! residual `E[(2ē − 1)(z − q*)]` vanishes for either value of the true
//! indicator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation level of the KT estimate.
pub const DEFAULT_KT_GAMMA: f64 = 0.45;

/// Configured predictor family, as written in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    /// `q ≡ 0`: plain filtering with probe rounds.
    Zero,
    /// Known flip rate.
    Oracle { p: f64 },
    /// Truncated Krichevsky–Trofimov estimate from probe rounds.
    Kt { gamma: f64 },
    /// Latch the flip state seen at the latest probe.
    SenseHold,
    /// Oracle-side only: `q_t = z_t`. The harness feeds the true flip to the
    /// calibrator, so this is never a deployable predictor.
    Genie,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec::Kt {
            gamma: DEFAULT_KT_GAMMA,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PredictorSpec::Oracle { p } if !(0.0..0.5).contains(&p) => {
                Err(Error::Config(format!("oracle predictor needs p in [0, 0.5), got {p}")))
            }
            PredictorSpec::Kt { gamma } if !(gamma > 0.0 && gamma < 0.5) => Err(Error::Config(format!(
                "KT truncation gamma must lie in (0, 0.5), got {gamma}"
            ))),
            _ => Ok(()),
        }
    }

    /// Tightest compensation bound `W` that keeps `|w| ≤ W` for this family.
    pub fn default_w_bound(&self) -> f64 {
        match *self {
            PredictorSpec::Zero => 0.0,
            PredictorSpec::Oracle { p } => p / (1.0 - 2.0 * p),
            PredictorSpec::Kt { gamma } => gamma / (1.0 - 2.0 * gamma),
            PredictorSpec::SenseHold | PredictorSpec::Genie => 1.0,
        }
    }

    /// Initial predictor state. The genie has no state of its own and is
    /// represented by `Zero`; the harness overrides its prediction per round.
    pub fn initial_state(&self) -> PredictorState {
        match *self {
            PredictorSpec::Zero | PredictorSpec::Genie => PredictorState::Zero,
            PredictorSpec::Oracle { p } => PredictorState::Oracle { p },
            PredictorSpec::Kt { gamma } => PredictorState::Kt {
                sum: 0.0,
                count: 0,
                gamma,
            },
            PredictorSpec::SenseHold => PredictorState::SenseHold { z_held: false },
        }
    }
}

/// Running state of a predictor inside one calibrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PredictorState {
    Zero,
    Oracle { p: f64 },
    Kt { sum: f64, count: usize, gamma: f64 },
    SenseHold { z_held: bool },
}

/// Feeds one recovered flip indicator from a probe round.
pub fn predictor_train(state: PredictorState, z: bool) -> PredictorState {
    match state {
        PredictorState::Kt { sum, count, gamma } => PredictorState::Kt {
            sum: sum + f64::from(u8::from(z)),
            count: count + 1,
            gamma,
        },
        PredictorState::SenseHold { .. } => PredictorState::SenseHold { z_held: z },
        other => other,
    }
}

/// Truncated KT estimate `min{(0.5 + k)/(n + 1), γ}`.
pub fn kt_estimate(sum: f64, count: usize, gamma: f64) -> f64 {
    ((0.5 + sum) / (count as f64 + 1.0)).min(gamma)
}

/// `p / (2p − 1)`, the prediction minimising the expected residual.
pub fn optimal_prediction(p: f64) -> Result<f64> {
    let denom = 2.0 * p - 1.0;
    if denom == 0.0 {
        return Err(Error::Singularity(p));
    }
    Ok(p / denom)
}

/// Current prediction `q_t`.
pub fn predict_q(state: &PredictorState) -> Result<f64> {
    match *state {
        PredictorState::Zero => Ok(0.0),
        PredictorState::Oracle { p } => optimal_prediction(p),
        PredictorState::Kt { sum, count, gamma } => optimal_prediction(kt_estimate(sum, count, gamma)),
        PredictorState::SenseHold { z_held } => Ok(f64::from(u8::from(z_held))),
    }
}

/// Estimated flip rate, for predictors that estimate one.
pub fn estimated_rate(state: &PredictorState) -> Option<f64> {
    match *state {
        PredictorState::Kt { sum, count, gamma } => Some(kt_estimate(sum, count, gamma)),
        _ => None,
    }
}

/// `clamp((2ē − 1)·q, −W, W)`.
#[inline]
pub fn compensation(e_obs: bool, q: f64, w_bound: f64) -> f64 {
    debug_assert!(w_bound >= 0.0);
    let sign = if e_obs { 1.0 } else { -1.0 };
    (sign * q).clamp(-w_bound, w_bound)
}

/// Ideal correction `(2ē − 1)·z`, equal to `g − ḡ` on every round.
#[inline]
pub fn oracle_correction(e_obs: bool, z: bool) -> f64 {
    match (e_obs, z) {
        (_, false) => 0.0,
        (true, true) => 1.0,
        (false, true) => -1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::quantile_gradient;

    const ALPHA: f64 = 0.1;

    #[test]
    fn training_updates() {
        let kt = PredictorState::Kt {
            sum: 0.0,
            count: 0,
            gamma: 0.45,
        };
        assert_eq!(
            predictor_train(kt, true),
            PredictorState::Kt {
                sum: 1.0,
                count: 1,
                gamma: 0.45
            }
        );
        assert_eq!(
            predictor_train(PredictorState::SenseHold { z_held: false }, true),
            PredictorState::SenseHold { z_held: true }
        );
        let oracle = PredictorState::Oracle { p: 0.1 };
        assert_eq!(predictor_train(oracle, true), oracle);
        assert_eq!(predictor_train(PredictorState::Zero, true), PredictorState::Zero);
    }

    #[test]
    fn predictions() {
        let q = predict_q(&PredictorState::Oracle { p: 0.1 }).unwrap();
        assert!((q + 0.125).abs() < 1e-15);
        let kt = |sum, count| PredictorState::Kt {
            sum,
            count,
            gamma: 0.45,
        };
        assert!((predict_q(&kt(0.0, 0)).unwrap() + 4.5).abs() < 1e-12);
        assert!((predict_q(&kt(2.0, 3)).unwrap() + 4.5).abs() < 1e-12);
        assert!((predict_q(&kt(0.0, 4)).unwrap() + 0.125).abs() < 1e-12);
        assert_eq!(predict_q(&PredictorState::SenseHold { z_held: true }).unwrap(), 1.0);
        assert_eq!(predict_q(&PredictorState::Zero).unwrap(), 0.0);
    }

    #[test]
    fn half_rate_is_singular() {
        assert!(matches!(
            predict_q(&PredictorState::Oracle { p: 0.5 }),
            Err(Error::Singularity(_))
        ));
        assert!(PredictorSpec::Oracle { p: 0.5 }.validate().is_err());
        assert!(PredictorSpec::Kt { gamma: 0.5 }.validate().is_err());
        assert!(PredictorSpec::Kt { gamma: 0.0 }.validate().is_err());
    }

    #[test]
    fn compensation_values() {
        assert_eq!(compensation(true, -0.125, 0.125), -0.125);
        assert_eq!(compensation(false, -0.125, 0.125), 0.125);
        assert_eq!(compensation(true, 1.0, 1.0), 1.0);
        assert_eq!(compensation(false, 1.0, 1.0), -1.0);
        assert_eq!(compensation(true, 3.0, 1.0), 1.0);
    }

    #[test]
    fn oracle_correction_values() {
        assert_eq!(oracle_correction(true, true), 1.0);
        assert_eq!(oracle_correction(false, true), -1.0);
        assert_eq!(oracle_correction(true, false), 0.0);
        assert_eq!(oracle_correction(false, false), 0.0);
    }

    #[test]
    fn correction_identity_exhaustive() {
        for e in [false, true] {
            for z in [false, true] {
                let e_obs = e ^ z;
                let gap = quantile_gradient(ALPHA, e) - quantile_gradient(ALPHA, e_obs);
                assert!((gap - oracle_correction(e_obs, z)).abs() < 1e-15, "e={e} z={z}");
            }
        }
    }

    #[test]
    fn oracle_prediction_zeroes_expected_residual() {
        // E_z[(2ē−1)(z − q*)] with z ~ Bern(p), ē = e XOR z.
        for p in [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.49] {
            let q = optimal_prediction(p).unwrap();
            for e in [false, true] {
                let term = |z: bool| {
                    let e_obs = e ^ z;
                    let sign = if e_obs { 1.0 } else { -1.0 };
                    sign * (f64::from(u8::from(z)) - q)
                };
                let expected = (1.0 - p) * term(false) + p * term(true);
                assert!(expected.abs() < 1e-12, "p={p} e={e} -> {expected}");
            }
        }
    }

    #[test]
    fn default_bounds_cover_predictions() {
        let spec = PredictorSpec::Oracle { p: 0.2 };
        let q = predict_q(&spec.initial_state()).unwrap();
        assert!((q.abs() - spec.default_w_bound()).abs() < 1e-15);
        assert_eq!(PredictorSpec::SenseHold.default_w_bound(), 1.0);
        let gamma = 0.45;
        assert!((PredictorSpec::Kt { gamma }.default_w_bound() - 4.5).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kt_estimate_formula(bits in proptest::collection::vec(any::<bool>(), 0..200), gamma in 0.01..0.49f64) {
                let mut state = PredictorState::Kt { sum: 0.0, count: 0, gamma };
                for &z in &bits {
                    state = predictor_train(state, z);
                }
                let ones = bits.iter().filter(|b| **b).count() as f64;
                let expected = ((0.5 + ones) / (bits.len() as f64 + 1.0)).min(gamma);
                let est = estimated_rate(&state).unwrap();
                prop_assert!(est > 0.0 && est <= gamma);
                prop_assert!((est - expected).abs() < 1e-12);
                if let PredictorState::Kt { sum, count, .. } = state {
                    prop_assert!(sum >= 0.0 && sum <= count as f64);
                }
            }

            #[test]
            fn oracle_w_bound_matches_abs(p in 0.0..0.499f64) {
                let q = optimal_prediction(p).unwrap();
                prop_assert!((q.abs() - p / (1.0 - 2.0 * p)).abs() < 1e-9);
            }

            #[test]
            fn kt_w_bound_covers(sum_frac in 0.0..=1.0f64, count in 0usize..500, gamma in 0.01..0.49f64) {
                let sum = (sum_frac * count as f64).floor();
                let q = predict_q(&PredictorState::Kt { sum, count, gamma }).unwrap();
                let w = PredictorSpec::Kt { gamma }.default_w_bound();
                prop_assert!(q.abs() <= w + 1e-12);
            }
        }
    }
}
