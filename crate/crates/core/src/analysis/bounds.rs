//! Right-hand sides of the deterministic and high-probability miscoverage
//! bounds, and pathwise checks of the iterate-boundedness lemmas.

use serde::{Deserialize, Serialize};

use super::{corruption_counts, miscoverage, CorruptionCounts};
use crate::calibrators::{Algorithm, TrainingSchedule};
use crate::conformal::{CalibrationConfig, RunTrace};
use crate::corruption::ChannelSpec;
use crate::error::{Error, Result};

/// A bound holds iff `rhs − observed ≥ −BOUND_SLACK`.
pub const BOUND_SLACK: f64 = 1e-12;

/// Absolute tolerance for iterate-range checks, which accumulate rounding
/// over up to `T` additions.
pub const ITERATE_SLACK: f64 = 1e-9;

fn base_term(cfg: &CalibrationConfig, extra_eta: f64, horizon: usize) -> f64 {
    (cfg.score_bound + cfg.eta * extra_eta) / (cfg.eta * horizon as f64)
}

/// `(B+η)/(ηT) + |G01 − G10|/T + max{α·G10, (1−α)·G01}/T`.
pub fn theorem1_rhs(counts: &CorruptionCounts, cfg: &CalibrationConfig, horizon: usize) -> f64 {
    let t = horizon as f64;
    let g01 = counts.g_0to1 as f64;
    let g10 = counts.g_1to0 as f64;
    base_term(cfg, 1.0, horizon) + (g01 - g10).abs() / t + (cfg.alpha * g10).max((1.0 - cfg.alpha) * g01) / t
}

/// `(B+η)/(ηT) + |G̃01 − G̃10|/T` over in-range rounds only.
pub fn theorem2_rhs(counts: &CorruptionCounts, cfg: &CalibrationConfig, horizon: usize) -> f64 {
    base_term(cfg, 1.0, horizon) + (counts.g_in_0to1 as f64 - counts.g_in_1to0 as f64).abs() / horizon as f64
}

/// Tight and relaxed compensated bounds. The residual runs over in-range
/// non-training rounds, the only rounds where compensation is applied.
pub fn theorem3_rhs(trace: &RunTrace, q_series: &[f64], w_bound: f64) -> Result<(f64, f64)> {
    if q_series.len() != trace.steps.len() {
        return Err(Error::InvalidArgument(format!(
            "q series has {} entries for a trace of {} steps",
            q_series.len(),
            trace.steps.len()
        )));
    }
    let horizon = trace.steps.len();
    if horizon == 0 {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let (mut signed, mut absolute) = (0.0, 0.0);
    for (s, &q) in trace.steps.iter().zip(q_series) {
        if s.in_range && !s.is_training {
            let gap = f64::from(u8::from(s.z)) - q;
            signed += if s.e_obs { gap } else { -gap };
            absolute += gap.abs();
        }
    }
    let base = base_term(&trace.config, w_bound + 2.0, horizon);
    let t = horizon as f64;
    Ok((base + signed.abs() / t, base + absolute / t))
}

/// `max{f, Δ − f}`.
pub fn f_hat(delta: usize, f: usize) -> usize {
    f.max(delta.saturating_sub(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorollaryId {
    C31,
    C41,
    C51,
    C32,
    C42,
    C52,
}

impl CorollaryId {
    pub const ALL: [CorollaryId; 6] = [
        CorollaryId::C31,
        CorollaryId::C41,
        CorollaryId::C51,
        CorollaryId::C32,
        CorollaryId::C42,
        CorollaryId::C52,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorollaryId::C31 => "c31",
            CorollaryId::C41 => "c41",
            CorollaryId::C51 => "c51",
            CorollaryId::C32 => "c32",
            CorollaryId::C42 => "c42",
            CorollaryId::C52 => "c52",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown corollary '{s}'")))
    }

    /// Bounds for the bounded-variation model hold on every path.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, CorollaryId::C32 | CorollaryId::C42 | CorollaryId::C52)
    }
}

/// Inputs to the corollary evaluators; each corollary reads only what it needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorollaryInputs {
    pub horizon: usize,
    pub score_bound: f64,
    pub eta: f64,
    /// Number of in-range rounds `|I|`.
    pub in_range: Option<usize>,
    pub size_p: Option<usize>,
    pub p: Option<f64>,
    pub p_hat: Option<f64>,
    /// Confidence level δ.
    pub delta_conf: Option<f64>,
    /// Frame length Δ.
    pub frame: Option<usize>,
    pub f_budget: Option<usize>,
}

fn need<T>(v: Option<T>, which: CorollaryId, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("{} needs {what}", which.name())))
}

/// Right-hand side of the selected corollary.
///
/// The AC-ROCP i.i.d. corollary fixes `W = |p/(2p−1)|` and reads the realised
/// estimate `p̂` (falling back to `p` when none was formed).
pub fn corollary_rhs(which: CorollaryId, inputs: &CorollaryInputs) -> Result<f64> {
    if inputs.horizon == 0 || !(inputs.eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{} needs a positive horizon and learning rate",
            which.name()
        )));
    }
    let t = inputs.horizon as f64;
    let b = inputs.score_bound;
    let eta = inputs.eta;
    let base = |extra: f64| (b + eta * extra) / (eta * t);
    let delta_conf = || -> Result<f64> {
        let d = need(inputs.delta_conf, which, "a confidence level delta")?;
        if d > 0.0 && d < 1.0 {
            Ok(d)
        } else {
            Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {d}")))
        }
    };
    let frame = || -> Result<(f64, f64)> {
        let d = need(inputs.frame, which, "the frame length")?;
        let f = need(inputs.f_budget, which, "the per-frame budget")?;
        if d == 0 {
            return Err(Error::InvalidArgument("frame length must be positive".into()));
        }
        Ok((d as f64, f as f64))
    };
    Ok(match which {
        CorollaryId::C31 => {
            let p = need(inputs.p, which, "the flip rate p")?;
            let d = delta_conf()?;
            base(1.0) + 2.0 * (p + ((1.0 / d).ln() / (2.0 * t)).sqrt())
        }
        CorollaryId::C41 => {
            let p = need(inputs.p, which, "the flip rate p")?;
            let d = delta_conf()?;
            let n = need(inputs.in_range, which, "the in-range count")? as f64;
            // |I|/T · (p + sqrt(log(1/δ)/(2|I|))), written to stay finite at |I| = 0
            base(1.0) + (n * p + (n * (1.0 / d).ln() / 2.0).sqrt()) / t
        }
        CorollaryId::C51 => {
            let p = need(inputs.p, which, "the flip rate p")?;
            let d = delta_conf()?;
            let n = need(inputs.in_range, which, "the in-range count")? as f64;
            let size_p = need(inputs.size_p, which, "the training-set size")? as f64;
            let p_hat = inputs.p_hat.unwrap_or(p);
            let w = (p / (2.0 * p - 1.0)).abs();
            let log4 = (4.0 / d).ln();
            let h1 = (n * log4 / 2.0).sqrt() / ((1.0 - 2.0 * p) * t);
            let worst = 1.0 - 2.0 * p.max(p_hat);
            let h2 = n / (worst * worst * t) * ((log4 / (2.0 * (size_p + 1.0))).sqrt() + 1.0 / (2.0 * (size_p + 1.0)));
            base(w + 2.0) + h1 + h2
        }
        CorollaryId::C32 | CorollaryId::C42 => {
            let (d, f) = frame()?;
            let fh = f.max(d - f);
            let k = if which == CorollaryId::C32 { 2.0 } else { 1.0 };
            base(1.0) + k * fh / d + k * fh / t
        }
        CorollaryId::C52 => {
            let (d, f) = frame()?;
            base(3.0) + f / d + f / t
        }
    })
}

/// Context the harness supplies alongside a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub algorithm: Algorithm,
    pub w_bound: f64,
    pub channel: ChannelSpec,
    pub schedule: TrainingSchedule,
    pub corollaries: Vec<CorollaryId>,
    pub delta_conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// The pathwise guarantee of the algorithm that produced the trace.
    Theorem,
    /// A requested corollary; its premises may not match the run.
    Corollary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub kind: BoundKind,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
    /// Holds on every path (as opposed to with probability `1 − δ`).
    pub deterministic: bool,
}

impl BoundEntry {
    pub fn new(name: &str, kind: BoundKind, rhs: f64, observed: f64, deterministic: bool) -> Self {
        let slack = rhs - observed;
        Self {
            name: name.to_string(),
            kind,
            rhs,
            holds: slack >= -BOUND_SLACK,
            slack,
            deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateBound {
    /// `[−ηα(1+G10), B+η(1−α)(1+G01)]` with running flip counts.
    CorruptedOcp,
    /// `[−ηα, B+η(1−α)]`.
    Filtered,
    /// `[−η(W+1), B+η(W+1)]` on the hidden threshold.
    Compensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateViolation {
    /// Round index of the iterate (`T + 1` for the final threshold).
    pub t: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateCheck {
    pub kind: IterateBound,
    pub holds: bool,
    /// Smallest distance to either end of the allowed range (negative if violated).
    pub min_margin: f64,
    pub first_violation: Option<IterateViolation>,
}

/// Checks every iterate of the trace (and the final one) against the range
/// lemma matching the algorithm.
pub fn check_iterate_bounds(trace: &RunTrace, algorithm: Algorithm, w_bound: f64) -> IterateCheck {
    let cfg = &trace.config;
    let (b, eta, alpha) = (cfg.score_bound, cfg.eta, cfg.alpha);
    let kind = match algorithm {
        Algorithm::OcpIdeal | Algorithm::Ocp => IterateBound::CorruptedOcp,
        Algorithm::Frocp => IterateBound::Filtered,
        Algorithm::Acrocp => IterateBound::Compensated,
    };
    let range = |g01: usize, g10: usize| match kind {
        IterateBound::CorruptedOcp => (
            -eta * alpha * (1.0 + g10 as f64),
            b + eta * (1.0 - alpha) * (1.0 + g01 as f64),
        ),
        IterateBound::Filtered => (-eta * alpha, b + eta * (1.0 - alpha)),
        IterateBound::Compensated => (-eta * (w_bound + 1.0), b + eta * (w_bound + 1.0)),
    };
    let mut check = IterateCheck {
        kind,
        holds: true,
        min_margin: f64::INFINITY,
        first_violation: None,
    };
    let mut visit = |t: usize, value: f64, (lo, hi): (f64, f64)| {
        let margin = (value - lo).min(hi - value);
        check.min_margin = check.min_margin.min(margin);
        if margin < -ITERATE_SLACK && check.first_violation.is_none() {
            check.holds = false;
            check.first_violation = Some(IterateViolation { t, value, lo, hi });
        }
    };
    let (mut g01, mut g10) = (0usize, 0usize);
    for s in &trace.steps {
        visit(s.t, s.iterate, range(g01, g10));
        if s.z {
            if s.e_true {
                g10 += 1;
            } else {
                g01 += 1;
            }
        }
    }
    visit(trace.steps.len() + 1, trace.r_final, range(g01, g10));
    check
}

/// Inputs recorded alongside a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub counts: CorruptionCounts,
    pub horizon: usize,
    pub size_p: usize,
    pub w_bound: f64,
    pub p: Option<f64>,
    pub p_hat: Option<f64>,
    pub delta_conf: f64,
    pub frame: Option<usize>,
    pub f_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub miscov_observed: f64,
    pub entries: Vec<BoundEntry>,
    pub iterate: IterateCheck,
    pub inputs: BoundInputs,
}

impl BoundReport {
    /// First failing pathwise theorem for the algorithm that produced the trace.
    pub fn first_theorem_failure(&self) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.kind == BoundKind::Theorem && !e.holds)
    }

    pub fn entry(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Evaluates the theorem matching the algorithm, the iterate lemma, and every
/// requested corollary on one trace.
pub fn evaluate_bounds(trace: &RunTrace, ctx: &BoundContext) -> Result<BoundReport> {
    let observed = miscoverage(trace)?;
    let cfg = &trace.config;
    let horizon = trace.steps.len();
    let counts = corruption_counts(trace);
    let mut entries = Vec::new();
    match ctx.algorithm {
        Algorithm::OcpIdeal => {
            entries.push(BoundEntry::new(
                "lemma1",
                BoundKind::Theorem,
                theorem1_rhs(&counts, cfg, horizon),
                observed,
                true,
            ));
        }
        Algorithm::Ocp => {
            entries.push(BoundEntry::new(
                "theorem1",
                BoundKind::Theorem,
                theorem1_rhs(&counts, cfg, horizon),
                observed,
                true,
            ));
        }
        Algorithm::Frocp => {
            entries.push(BoundEntry::new(
                "theorem2",
                BoundKind::Theorem,
                theorem2_rhs(&counts, cfg, horizon),
                observed,
                true,
            ));
        }
        Algorithm::Acrocp => {
            let (tight, relaxed) = theorem3_rhs(trace, &trace.q_series(), ctx.w_bound)?;
            entries.push(BoundEntry::new(
                "theorem3_tight",
                BoundKind::Theorem,
                tight,
                observed,
                true,
            ));
            entries.push(BoundEntry::new(
                "theorem3_relaxed",
                BoundKind::Theorem,
                relaxed,
                observed,
                true,
            ));
        }
    }

    let (frame, f_budget) = match ctx.channel {
        ChannelSpec::Budget { delta, f_budget, .. } => (Some(delta), Some(f_budget)),
        _ => (None, None),
    };
    let size_p = ctx.schedule.size_within(horizon);
    let in_range = match ctx.algorithm {
        Algorithm::Acrocp => counts.in_range_non_training,
        _ => counts.in_range,
    };
    let inputs = CorollaryInputs {
        horizon,
        score_bound: cfg.score_bound,
        eta: cfg.eta,
        in_range: Some(in_range),
        size_p: Some(size_p),
        p: ctx.channel.flip_rate(),
        p_hat: trace.p_hat,
        delta_conf: Some(ctx.delta_conf),
        frame,
        f_budget,
    };
    for c in &ctx.corollaries {
        let rhs = corollary_rhs(*c, &inputs)?;
        entries.push(BoundEntry::new(
            c.name(),
            BoundKind::Corollary,
            rhs,
            observed,
            c.is_deterministic(),
        ));
    }

    Ok(BoundReport {
        miscov_observed: observed,
        entries,
        iterate: check_iterate_bounds(trace, ctx.algorithm, ctx.w_bound),
        inputs: BoundInputs {
            counts,
            horizon,
            size_p,
            w_bound: ctx.w_bound,
            p: inputs.p,
            p_hat: trace.p_hat,
            delta_conf: ctx.delta_conf,
            frame,
            f_budget,
        },
    })
}
