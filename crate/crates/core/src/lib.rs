//! Online conformal prediction under corrupted coverage feedback.
//!
//! The [`calibrators`] module holds the threshold-update rules (plain OCP,
//! the filtered F-ROCP and the actively compensated AC-ROCP). Corruption
//! channels live in [`corruption`], corruption-rate predictors in
//! [`predictors`], bound evaluators and aggregation in [`analysis`], and
//! stream synthesis, configuration and trial orchestration in [`harness`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibrators;
pub mod conformal;
pub mod corruption;
pub mod error;
pub mod harness;
pub mod predictors;

pub use calibrators::{run_calibrator, Algorithm, Calibrator, CalibratorSpec, TrainingSchedule};
pub use conformal::{CalibrationConfig, Mode, RoundScore, RunTrace, StepRecord};
pub use corruption::{BudgetPolicy, Channel, ChannelSpec};
pub use error::{Error, Result};
pub use predictors::PredictorSpec;
