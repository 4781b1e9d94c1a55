//! Feedback corruption channels.
//!
//! A channel maps the true miscoverage indicator `e_t` to the observed
//! `ē_t = e_t XOR z_t` and reports the flip `z_t` to the harness. Only the
//! harness sees `z_t`; calibrators receive `ē_t` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ChaCha stream id reserved for channel randomness (stream synthesis uses 0).
pub const CHANNEL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// Frame starts clean, then the next `f` rounds are flipped.
    #[default]
    Burst,
    /// Frame starts clean; flips every covered round while budget remains,
    /// pushing the threshold upward.
    GreedyDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    #[default]
    Ideal,
    Iid {
        p: f64,
    },
    Markov {
        p01: f64,
        p10: f64,
    },
    Budget {
        delta: usize,
        f_budget: usize,
        policy: BudgetPolicy,
    },
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelSpec::Ideal => Ok(()),
            ChannelSpec::Iid { p } => {
                if (0.0..0.5).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("iid channel needs p in [0, 0.5), got {p}")))
                }
            }
            ChannelSpec::Markov { p01, p10 } => {
                let ok = |x: f64| x > 0.0 && x <= 1.0;
                if ok(p01) && ok(p10) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "markov channel needs p01, p10 in (0, 1], got ({p01}, {p10})"
                    )))
                }
            }
            ChannelSpec::Budget { delta, f_budget, .. } => {
                if delta == 0 {
                    Err(Error::Config("budget channel needs delta >= 1".into()))
                } else if f_budget > delta {
                    Err(Error::Config(format!(
                        "budget channel needs f_budget <= delta, got {f_budget} > {delta}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Stationary flip rate, when the model has one.
    pub fn flip_rate(&self) -> Option<f64> {
        match *self {
            ChannelSpec::Ideal => Some(0.0),
            ChannelSpec::Iid { p } => Some(p),
            ChannelSpec::Markov { p01, p10 } => markov_stationary(p01, p10).ok().map(|(_, pi1)| pi1),
            ChannelSpec::Budget { .. } => None,
        }
    }
}

/// Channel output for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub e_obs: bool,
    pub z: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct FrameState {
    start: bool,
    switches_used: usize,
}

/// A stateful corruption process with its own deterministic generator.
#[derive(Debug, Clone)]
pub struct Channel {
    spec: ChannelSpec,
    rng: ChaCha8Rng,
    z_prev: Option<bool>,
    frame: FrameState,
    last_t: usize,
}

impl Channel {
    pub fn new(spec: ChannelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CHANNEL_STREAM);
        Ok(Self {
            spec,
            rng,
            z_prev: None,
            frame: FrameState::default(),
            last_t: 0,
        })
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    /// Corrupts round `t`'s indicator. Rounds must arrive in increasing order.
    pub fn corrupt(&mut self, e_true: bool, t: usize) -> Feedback {
        assert!(
            t > self.last_t,
            "channel rounds must be strictly increasing ({t} after {})",
            self.last_t
        );
        self.last_t = t;
        let z = match self.spec {
            ChannelSpec::Ideal => false,
            ChannelSpec::Iid { p } => self.rng.random::<f64>() < p,
            ChannelSpec::Markov { p01, p10 } => {
                let u = self.rng.random::<f64>();
                match self.z_prev {
                    None => {
                        let (_, pi1) = markov_stationary(p01, p10).expect("validated");
                        u < pi1
                    }
                    Some(false) => u < p01,
                    Some(true) => u >= p10,
                }
            }
            ChannelSpec::Budget {
                delta,
                f_budget,
                policy,
            } => self.budget_flip(e_true, t, delta, f_budget, policy),
        };
        self.z_prev = Some(z);
        Feedback { e_obs: e_true ^ z, z }
    }

    fn budget_flip(&mut self, e_true: bool, t: usize, delta: usize, f_budget: usize, policy: BudgetPolicy) -> bool {
        let pos = (t - 1) % delta;
        if pos == 0 {
            self.frame = FrameState {
                start: false,
                switches_used: 0,
            };
            return false;
        }
        let remaining = self.frame.switches_used < f_budget;
        let z = match policy {
            BudgetPolicy::Burst => pos <= f_budget,
            BudgetPolicy::GreedyDrift => remaining && !e_true,
        };
        if z != self.frame.start {
            self.frame.switches_used += 1;
        }
        assert!(
            self.frame.switches_used <= f_budget,
            "budget channel exceeded {f_budget} deviations in the frame containing round {t}"
        );
        z
    }
}

/// Stationary distribution `(π0, π1)` of the two-state flip chain.
pub fn markov_stationary(p01: f64, p10: f64) -> Result<(f64, f64)> {
    let total = p01 + p10;
    if !(total > 0.0) || p01 < 0.0 || p10 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "transition probabilities ({p01}, {p10}) must be non-negative and not both zero"
        )));
    }
    Ok((p10 / total, p01 / total))
}

/// Relaxation time `1 / (p01 + p10)`.
pub fn markov_memory_length(p01: f64, p10: f64) -> Result<f64> {
    markov_stationary(p01, p10)?;
    Ok(1.0 / (p01 + p10))
}

/// Transition probability `p01 = p10` giving memory length `m` with `π1 = 0.5`.
pub fn symmetric_transition_for_memory(m: f64) -> f64 {
    1.0 / (2.0 * m)
}

/// Number of positions in a frame that differ from the frame's first value.
pub fn budget_frame_variation(z_window: &[bool]) -> usize {
    match z_window.first() {
        None => 0,
        Some(&first) => z_window.iter().filter(|&&z| z != first).count(),
    }
}
