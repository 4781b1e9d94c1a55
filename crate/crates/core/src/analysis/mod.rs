//! Oracle-side metrics and bound evaluators.
//!
//! Everything here reads the true indicators and flips recorded by the
//! harness. None of it is reachable from a calibrator.

mod aggregate;
mod bounds;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, Aggregator, BoundTally, FinalMetrics, PerStepSeries, Summary};
pub use bounds::{
    check_iterate_bounds, corollary_rhs, evaluate_bounds, f_hat, theorem1_rhs, theorem2_rhs, theorem3_rhs,
    BoundContext, BoundEntry, BoundInputs, BoundKind, BoundReport, CorollaryId, CorollaryInputs, IterateBound,
    IterateCheck, IterateViolation, BOUND_SLACK, ITERATE_SLACK,
};

use crate::conformal::RunTrace;
use crate::error::{Error, Result};

/// Flip counts split by direction, overall and restricted to in-range rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorruptionCounts {
    /// `Σ z_t`.
    pub g_total: usize,
    /// Covered rounds reported as miscovered (gradient `α → α − 1`).
    pub g_0to1: usize,
    /// Miscovered rounds reported as covered (gradient `α − 1 → α`).
    pub g_1to0: usize,
    pub g_in_0to1: usize,
    pub g_in_1to0: usize,
    /// Rounds whose played threshold lies in `[0, B)`.
    pub in_range: usize,
    /// In-range rounds that are not probes: where compensation can apply.
    pub in_range_non_training: usize,
    pub training: usize,
}

/// `|α − (1/T) Σ e_t|` over the true indicators.
pub fn miscoverage(trace: &RunTrace) -> Result<f64> {
    if trace.steps.is_empty() {
        return Err(Error::InvalidArgument("miscoverage of an empty trace".into()));
    }
    let misses = trace.steps.iter().filter(|s| s.e_true).count() as f64;
    Ok((trace.config.alpha - misses / trace.steps.len() as f64).abs())
}

/// Empirical coverage `1 − (1/T) Σ e_t`.
pub fn coverage(trace: &RunTrace) -> f64 {
    if trace.steps.is_empty() {
        return f64::NAN;
    }
    1.0 - trace.steps.iter().filter(|s| s.e_true).count() as f64 / trace.steps.len() as f64
}

pub fn mean_set_size(trace: &RunTrace) -> f64 {
    trace.steps.iter().map(|s| s.set_size).sum::<f64>() / trace.steps.len() as f64
}

pub fn corruption_counts(trace: &RunTrace) -> CorruptionCounts {
    let mut c = CorruptionCounts::default();
    for s in &trace.steps {
        c.in_range += usize::from(s.in_range);
        c.training += usize::from(s.is_training);
        c.in_range_non_training += usize::from(s.in_range && !s.is_training);
        if !s.z {
            continue;
        }
        c.g_total += 1;
        match (s.e_true, s.in_range) {
            (false, false) => c.g_0to1 += 1,
            (false, true) => {
                c.g_0to1 += 1;
                c.g_in_0to1 += 1;
            }
            (true, false) => c.g_1to0 += 1,
            (true, true) => {
                c.g_1to0 += 1;
                c.g_in_1to0 += 1;
            }
        }
    }
    c
}


#[cfg(test)]
mod tests {
    use super::test_support::trace_from;
    use super::*;

    #[test]
    fn miscoverage_examples() {
        let mut rows = vec![(false, false, true); 10];
        rows[3].0 = true;
        assert!(miscoverage(&trace_from(0.1, &rows)).unwrap().abs() < 1e-15);
        let rows = vec![(false, false, true); 10];
        assert!((miscoverage(&trace_from(0.1, &rows)).unwrap() - 0.1).abs() < 1e-15);
        let rows = [
            (true, false, true),
            (false, false, true),
            (true, false, true),
            (false, false, true),
        ];
        assert_eq!(miscoverage(&trace_from(0.5, &rows)).unwrap(), 0.0);
        assert!(miscoverage(&trace_from(0.5, &[])).is_err());
    }

    #[test]
    fn counts_examples() {
        let c = corruption_counts(&trace_from(0.1, &[(false, false, true); 5]));
        assert_eq!(
            (c.g_total, c.g_0to1, c.g_1to0, c.g_in_0to1, c.g_in_1to0),
            (0, 0, 0, 0, 0)
        );

        let c = corruption_counts(&trace_from(
            0.1,
            &[(false, true, true), (true, true, true), (false, false, true)],
        ));
        assert_eq!((c.g_0to1, c.g_1to0, c.g_total), (1, 1, 2));

        let c = corruption_counts(&trace_from(0.1, &[(false, true, false), (true, true, false)]));
        assert_eq!((c.g_in_0to1, c.g_in_1to0), (0, 0));
        assert_eq!(c.g_total, 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn count_identities(rows in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..200)) {
                let c = corruption_counts(&trace_from(0.1, &rows));
                prop_assert_eq!(c.g_total, c.g_0to1 + c.g_1to0);
                prop_assert!(c.g_in_0to1 <= c.g_0to1 && c.g_in_1to0 <= c.g_1to0);
                prop_assert_eq!(c.g_total, rows.iter().filter(|r| r.1).count());
            }
        }
    }
}
