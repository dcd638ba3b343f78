use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineParams;
use crate::handover::{CmParams, RangeSchedule};
use crate::lia::CongestionPolicy;
use crate::medium::{MediumConfig, RsuId};
use crate::scheduler::SchedulerPolicy;
use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown builtin scenario {0:?} (expected \"baseline\" or \"delay200\")")]
    UnknownBuiltin(String),
}

fn default_prop_delay() -> f64 {
    0.002
}

fn default_metrics_bin() -> f64 {
    1.0
}

/// One roadside unit: when it is in range and how its link behaves.
/// Times are seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuSpec {
    pub rsu_id: RsuId,
    /// `[start, end)` pairs, sorted and disjoint.
    pub intervals: Vec<[f64; 2]>,
    /// Injected one-way delay, applied in both directions.
    #[serde(default)]
    pub extra_delay: f64,
    /// One-way radio propagation plus processing delay.
    #[serde(default = "default_prop_delay")]
    pub prop_delay: f64,
}

impl RsuSpec {
    pub fn schedule(&self) -> RangeSchedule {
        RangeSchedule::new(
            self.intervals
                .iter()
                .map(|&[s, e]| (SimTime::from_secs_f64(s), SimTime::from_secs_f64(e)))
                .collect(),
        )
        .expect("validated")
    }
}

/// Declarative experiment description. Durations and delays are seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub engine: EngineParams,
    #[serde(default)]
    pub cm: CmParams,
    #[serde(default)]
    pub scheduler: SchedulerPolicy,
    #[serde(default)]
    pub congestion: CongestionPolicy,
    pub rsus: Vec<RsuSpec>,
    #[serde(default = "default_metrics_bin")]
    pub metrics_bin: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration: must be > 0, got {}", self.duration));
        }
        if !(self.metrics_bin > 0.0 && self.metrics_bin <= self.duration) {
            return invalid(format!(
                "metrics_bin: must be in (0, duration], got {}",
                self.metrics_bin
            ));
        }
        if self.rsus.is_empty() {
            return invalid("rsus: at least one RSU is required".into());
        }
        self.medium
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.engine
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let mut ids = BTreeSet::new();
        for (i, rsu) in self.rsus.iter().enumerate() {
            if !ids.insert(rsu.rsu_id) {
                return invalid(format!("rsus[{i}].rsu_id: duplicate id {}", rsu.rsu_id));
            }
            if !(rsu.extra_delay >= 0.0 && rsu.extra_delay.is_finite()) {
                return invalid(format!(
                    "rsus[{i}].extra_delay: must be >= 0, got {}",
                    rsu.extra_delay
                ));
            }
            if !(rsu.prop_delay >= 0.0 && rsu.prop_delay.is_finite()) {
                return invalid(format!(
                    "rsus[{i}].prop_delay: must be >= 0, got {}",
                    rsu.prop_delay
                ));
            }
            let mut prev_end = f64::NEG_INFINITY;
            for (j, &[s, e]) in rsu.intervals.iter().enumerate() {
                let at = format!("rsus[{i}].intervals[{j}] [{s}, {e})");
                if !(s >= 0.0 && e <= self.duration) {
                    return invalid(format!("{at}: outside [0, duration={}]", self.duration));
                }
                if e <= s {
                    return invalid(format!("{at}: end must be after start"));
                }
                if s < prev_end {
                    return invalid(format!("{at}: overlaps or precedes the previous interval"));
                }
                prev_end = e;
            }
        }
        Ok(())
    }

    pub fn duration_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration)
    }

    pub fn bin_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.metrics_bin)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_json(&text)
}

/// The two experiments: `baseline` (no manipulation) and `delay200` (200 ms
/// added on RSU2's link).
///
/// Timeline: RSU1 in range on `[0, 50)`, RSU2 on `[20, 140]`, RSU3 on
/// `[100, 140]`.
pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let rsu = |id: u32, s: f64, e: f64| RsuSpec {
        rsu_id: RsuId(id),
        intervals: vec![[s, e]],
        extra_delay: 0.0,
        prop_delay: default_prop_delay(),
    };
    let mut cfg = ScenarioConfig {
        duration: 140.0,
        seed: 1,
        medium: MediumConfig::default(),
        engine: EngineParams::default(),
        cm: CmParams::default(),
        scheduler: SchedulerPolicy::MinRtt,
        congestion: CongestionPolicy::Lia,
        rsus: vec![rsu(1, 0.0, 50.0), rsu(2, 20.0, 140.0), rsu(3, 100.0, 140.0)],
        metrics_bin: 1.0,
    };
    match name {
        "baseline" => {}
        "delay200" => cfg.rsus[1].extra_delay = 0.2,
        other => return Err(ConfigError::UnknownBuiltin(other.to_string())),
    }
    Ok(cfg)
}
