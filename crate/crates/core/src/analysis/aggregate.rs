//! Cross-trial aggregation: per-step running coverage and set size, final
//! metrics, and bound-violation tallies. Trials are folded sequentially in
//! the order they are pushed, so results do not depend on how trials were
//! scheduled.

use serde::{Deserialize, Serialize};

use super::bounds::BoundReport;
use super::{coverage, mean_set_size, miscoverage};
use crate::conformal::RunTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.m2 / self.n as f64).max(0.0).sqrt()
    }
}

/// Running coverage `1 − (1/t)Σe` and running mean set size at each
/// recorded step, averaged across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStepSeries {
    pub t: Vec<usize>,
    pub coverage_mean: Vec<f64>,
    pub coverage_std: Vec<f64>,
    pub set_size_mean: Vec<f64>,
    pub set_size_std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub set_size_mean: f64,
    pub set_size_std: f64,
    pub miscov_mean: f64,
    pub miscov_std: f64,
    pub miscov_min: f64,
    pub miscov_max: f64,
    /// Mean realised corruption-rate estimate, where the predictor forms one.
    pub p_hat_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTally {
    pub name: String,
    pub deterministic: bool,
    pub trials: usize,
    pub violations: usize,
    /// Mean right-hand side; absent for the iterate-range check.
    pub rhs_mean: Option<f64>,
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_trials: usize,
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_step: Option<PerStepSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<FinalMetrics>,
    pub bounds: Vec<BoundTally>,
}

impl Summary {
    pub fn empty(horizon: usize) -> Self {
        Self {
            n_trials: 0,
            horizon,
            per_step: None,
            final_metrics: None,
            bounds: Vec::new(),
        }
    }

    pub fn bound(&self, name: &str) -> Option<&BoundTally> {
        self.bounds.iter().find(|b| b.name == name)
    }
}

struct TallyAcc {
    name: String,
    deterministic: bool,
    trials: usize,
    violations: usize,
    rhs: Welford,
    min_slack: f64,
}

/// Streaming accumulator; push traces in trial order, then [`finish`](Self::finish).
pub struct Aggregator {
    horizon: usize,
    stride: usize,
    first: Option<(f64, f64, f64, f64)>,
    coverage: Vec<Welford>,
    set_size: Vec<Welford>,
    final_coverage: Welford,
    final_set_size: Welford,
    miscov: Welford,
    miscov_min: f64,
    miscov_max: f64,
    p_hat: Welford,
    tallies: Vec<TallyAcc>,
}

impl Aggregator {
    /// `stride` keeps every `stride`-th step of the per-step arrays (plus the last).
    pub fn new(horizon: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        let kept = recorded_steps(horizon, stride).len();
        Ok(Self {
            horizon,
            stride,
            first: None,
            coverage: vec![Welford::default(); kept],
            set_size: vec![Welford::default(); kept],
            final_coverage: Welford::default(),
            final_set_size: Welford::default(),
            miscov: Welford::default(),
            miscov_min: f64::INFINITY,
            miscov_max: f64::NEG_INFINITY,
            p_hat: Welford::default(),
            tallies: Vec::new(),
        })
    }

    pub fn n_trials(&self) -> usize {
        self.miscov.n
    }

    pub fn push(&mut self, trace: &RunTrace, report: Option<&BoundReport>) -> Result<()> {
        let c = &trace.config;
        let key = (c.alpha, c.eta, c.score_bound, c.r_init);
        if trace.steps.len() != self.horizon {
            return Err(Error::InvalidArgument(format!(
                "trace has {} steps, expected {}",
                trace.steps.len(),
                self.horizon
            )));
        }
        match self.first {
            None => self.first = Some(key),
            Some(k) if k != key => {
                return Err(Error::InvalidArgument(
                    "traces do not share a calibration config".into(),
                ));
            }
            Some(_) => {}
        }

        let (mut misses, mut size_sum, mut slot) = (0usize, 0.0, 0usize);
        let recorded = recorded_steps(self.horizon, self.stride);
        for (i, s) in trace.steps.iter().enumerate() {
            misses += usize::from(s.e_true);
            size_sum += s.set_size;
            if slot < recorded.len() && recorded[slot] == i + 1 {
                let n = (i + 1) as f64;
                self.coverage[slot].push(1.0 - misses as f64 / n);
                self.set_size[slot].push(size_sum / n);
                slot += 1;
            }
        }

        let m = miscoverage(trace)?;
        self.miscov.push(m);
        self.miscov_min = self.miscov_min.min(m);
        self.miscov_max = self.miscov_max.max(m);
        self.final_coverage.push(coverage(trace));
        self.final_set_size.push(mean_set_size(trace));
        if let Some(p) = trace.p_hat {
            self.p_hat.push(p);
        }

        if let Some(report) = report {
            for e in &report.entries {
                self.tally(&e.name, e.deterministic, e.rhs, e.slack, e.holds);
            }
            let it = &report.iterate;
            self.tally("iterate_range", true, f64::NAN, it.min_margin, it.holds);
        }
        Ok(())
    }

    fn tally(&mut self, name: &str, deterministic: bool, rhs: f64, slack: f64, holds: bool) {
        let idx = match self.tallies.iter().position(|t| t.name == name) {
            Some(i) => i,
            None => {
                self.tallies.push(TallyAcc {
                    name: name.to_string(),
                    deterministic,
                    trials: 0,
                    violations: 0,
                    rhs: Welford::default(),
                    min_slack: f64::INFINITY,
                });
                self.tallies.len() - 1
            }
        };
        let t = &mut self.tallies[idx];
        t.trials += 1;
        t.violations += usize::from(!holds);
        if rhs.is_finite() {
            t.rhs.push(rhs);
        }
        t.min_slack = t.min_slack.min(slack);
    }

    pub fn finish(self) -> Summary {
        if self.miscov.n == 0 {
            return Summary::empty(self.horizon);
        }
        let recorded = recorded_steps(self.horizon, self.stride);
        let per_step = PerStepSeries {
            t: recorded,
            coverage_mean: self.coverage.iter().map(|w| w.mean).collect(),
            coverage_std: self.coverage.iter().map(Welford::std).collect(),
            set_size_mean: self.set_size.iter().map(|w| w.mean).collect(),
            set_size_std: self.set_size.iter().map(Welford::std).collect(),
        };
        Summary {
            n_trials: self.miscov.n,
            horizon: self.horizon,
            per_step: Some(per_step),
            final_metrics: Some(FinalMetrics {
                coverage_mean: self.final_coverage.mean,
                coverage_std: self.final_coverage.std(),
                set_size_mean: self.final_set_size.mean,
                set_size_std: self.final_set_size.std(),
                miscov_mean: self.miscov.mean,
                miscov_std: self.miscov.std(),
                miscov_min: self.miscov_min,
                miscov_max: self.miscov_max,
                p_hat_mean: (self.p_hat.n > 0).then_some(self.p_hat.mean),
            }),
            bounds: self
                .tallies
                .into_iter()
                .map(|t| BoundTally {
                    name: t.name,
                    deterministic: t.deterministic,
                    trials: t.trials,
                    violations: t.violations,
                    rhs_mean: (t.rhs.n > 0).then_some(t.rhs.mean),
                    min_slack: t.min_slack,
                })
                .collect(),
        }
    }
}

fn recorded_steps(horizon: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (stride..=horizon).step_by(stride).collect();
    if horizon > 0 && v.last() != Some(&horizon) {
        v.push(horizon);
    }
    v
}

/// Aggregates traces with every step recorded and no bound reports.
pub fn aggregate(traces: &[RunTrace]) -> Result<Summary> {
    let Some(first) = traces.first() else {
        return Ok(Summary::empty(0));
    };
    let mut agg = Aggregator::new(first.steps.len(), 1)?;
    for t in traces {
        agg.push(t, None)?;
    }
    Ok(agg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::test_support::trace_from;

    #[test]
    fn identical_traces_have_zero_std() {
        let rows = [(true, false, true), (false, false, true), (false, true, true)];
        let t = trace_from(0.1, &rows);
        let s = aggregate(&[t.clone(), t]).unwrap();
        let ps = s.per_step.unwrap();
        assert!(ps.coverage_std.iter().all(|&x| x == 0.0));
        assert!(ps.set_size_std.iter().all(|&x| x == 0.0));
        assert_eq!(s.final_metrics.unwrap().miscov_std, 0.0);
    }

    #[test]
    fn single_trace_mean_equals_values() {
        let rows = [
            (true, false, true),
            (false, false, true),
            (false, true, true),
            (true, false, true),
        ];
        let s = aggregate(&[trace_from(0.1, &rows)]).unwrap();
        let ps = s.per_step.unwrap();
        assert_eq!(ps.t, vec![1, 2, 3, 4]);
        let expected = [0.0, 0.5, 2.0 / 3.0, 0.5];
        for (got, want) in ps.coverage_mean.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(ps.coverage_std.iter().all(|&x| x == 0.0));
        assert_eq!(s.n_trials, 1);
    }

    #[test]
    fn heterogeneous_traces_rejected() {
        let a = trace_from(0.1, &[(false, false, true); 3]);
        let b = trace_from(0.1, &[(false, false, true); 4]);
        assert!(matches!(aggregate(&[a.clone(), b]), Err(Error::InvalidArgument(_))));
        let c = trace_from(0.2, &[(false, false, true); 3]);
        assert!(matches!(aggregate(&[a, c]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stride_keeps_last_step() {
        assert_eq!(recorded_steps(10, 4), vec![4, 8, 10]);
        assert_eq!(recorded_steps(8, 4), vec![4, 8]);
        assert!(recorded_steps(0, 3).is_empty());
    }

    #[test]
    fn empty_input_has_no_arrays() {
        let s = aggregate(&[]).unwrap();
        assert_eq!(s.n_trials, 0);
        assert!(s.per_step.is_none() && s.final_metrics.is_none());
    }

    #[test]
    fn population_std_of_two_values() {
        let mut w = Welford::default();
        w.push(1.0);
        w.push(3.0);
        assert_eq!(w.mean, 2.0);
        assert_eq!(w.std(), 1.0);
    }
}
