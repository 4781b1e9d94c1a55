//! Named desk-scale experiments (T = 10⁴, 10³ trials).
//!
//! Each preset is a base configuration plus sweep axes. A sweep value that
//! contains `=` is a `;`-separated bundle of assignments and the axis name is
//! only a label.

use super::config::ConfigMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub base: String,
    pub axes: Vec<(String, Vec<String>)>,
}

impl Preset {
    pub fn base_map(&self) -> Result<ConfigMap> {
        ConfigMap::parse(&self.base)
    }
}

/// Classification stream with 100 candidate labels.
const CLASSIFICATION_STREAM: &str = "
stream.generator = classification_softmax_like
stream.n_candidates = 100
stream.logit_std = 1.0
stream.boost = 5.0
";

const DESK_SCALE: &str = "
calibration.alpha = 0.1
calibration.eta = 0.05
calibration.score_bound = 1
calibration.horizon = 10000
n_trials = 1000
base_seed = 0
outputs.stride = 10
";

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub const PRESET_NAMES: [&str; 4] = [
    "fig2_iid_sweep",
    "fig6_p_sweep",
    "fig7_interval_sweep",
    "fig8_memory_sweep",
];

pub fn preset(name: &str) -> Result<Preset> {
    Ok(match name {
        "fig2_iid_sweep" => Preset {
            name: "fig2_iid_sweep",
            description: "coverage and set size over time under iid corruption p = 0.2",
            base: [
                DESK_SCALE,
                CLASSIFICATION_STREAM,
                "channel.kind = iid\nchannel.p = 0.2\nschedule.kind = prefix\nschedule.size = 50\n",
            ]
            .concat(),
            axes: vec![(
                "variant".into(),
                strings(&[
                    "algorithm=ocp_ideal",
                    "algorithm=ocp",
                    "algorithm=frocp",
                    "algorithm=acrocp;predictor.kind=oracle",
                    "algorithm=acrocp;predictor.kind=kt",
                ]),
            )],
        },
        "fig6_p_sweep" => Preset {
            name: "fig6_p_sweep",
            description: "final coverage and set size against the iid corruption rate",
            base: [
                DESK_SCALE,
                CLASSIFICATION_STREAM,
                "channel.kind = iid\nchannel.p = 0.2\nschedule.kind = prefix\nschedule.size = 50\n",
            ]
            .concat(),
            axes: vec![
                ("channel.p".into(), strings(&["0.1", "0.2", "0.3", "0.4"])),
                (
                    "variant".into(),
                    strings(&["algorithm=ocp", "algorithm=frocp", "algorithm=acrocp;predictor.kind=kt"]),
                ),
            ],
        },
        "fig7_interval_sweep" => Preset {
            name: "fig7_interval_sweep",
            description: "sense-and-hold compensation under Markov corruption (M = 100) against the probe interval",
            base: [
                DESK_SCALE,
                "stream.generator = beta\nstream.a = 2\nstream.b = 5\n",
                "channel.kind = markov\nchannel.memory = 100\n",
                "algorithm = acrocp\npredictor.kind = sense_hold\nschedule.kind = periodic\nschedule.delta = 10\n",
            ]
            .concat(),
            axes: vec![(
                "schedule.delta".into(),
                strings(&["2", "5", "10", "25", "50", "100", "250"]),
            )],
        },
        "fig8_memory_sweep" => Preset {
            name: "fig8_memory_sweep",
            description: "sense-and-hold compensation with probe interval 10 against the Markov memory length",
            base: [
                DESK_SCALE,
                "stream.generator = beta\nstream.a = 2\nstream.b = 5\n",
                "channel.kind = markov\nchannel.memory = 100\n",
                "algorithm = acrocp\npredictor.kind = sense_hold\nschedule.kind = periodic\nschedule.delta = 10\n",
            ]
            .concat(),
            axes: vec![(
                "channel.memory".into(),
                strings(&["2", "5", "10", "25", "50", "100", "250", "1000"]),
            )],
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::apply_sweep_value;

    #[test]
    fn every_preset_point_builds() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            let base = p.base_map().unwrap();
            let cfg = base.build().unwrap();
            assert_eq!(cfg.calibration.horizon, 10_000);
            assert_eq!(cfg.n_trials, 1000);
            for (k, values) in &p.axes {
                for v in values {
                    let mut m = base.clone();
                    apply_sweep_value(&mut m, k, v).unwrap();
                    m.build().unwrap();
                }
            }
        }
        assert!(preset("fig99").is_err());
    }
}
