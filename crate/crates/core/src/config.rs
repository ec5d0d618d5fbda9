//! Run configuration: one JSON document with `sim`, `arch`, `train`,
//! `condition` and `bench` sections. Unknown keys are rejected.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::dataio::DataCondition;
use crate::error::{Error, Result};
use crate::losses::ConsistencyForm;
use crate::netcore::{ArchConfig, StemConfig};
use crate::sigsim::{split_sizes, SimConfig};
use crate::trainer::{EmaMode, TrainConfig};

/// Network shape without the input length and class count, which come from
/// the simulated data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    #[serde(default)]
    pub stem: StemConfig,
    pub num_res_blocks: usize,
    pub channels_per_stage: Vec<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::from(&ArchConfig::desk(1, 2))
    }
}

impl From<&ArchConfig> for ArchSpec {
    fn from(a: &ArchConfig) -> Self {
        ArchSpec {
            stem: a.stem.clone(),
            num_res_blocks: a.num_res_blocks,
            channels_per_stage: a.channels_per_stage.clone(),
        }
    }
}

impl ArchSpec {
    pub fn toy() -> Self {
        ArchSpec::from(&ArchConfig::toy(1, 2))
    }

    pub fn resolve(&self, input_len: usize, num_classes: usize) -> ArchConfig {
        ArchConfig {
            input_len,
            input_channels: 2,
            stem: self.stem.clone(),
            num_res_blocks: self.num_res_blocks,
            channels_per_stage: self.channels_per_stage.clone(),
            num_classes,
        }
    }
}

/// EMA column of a benchmark sweep: `"off"` or a decay in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmaSetting {
    Off,
    Decay(f64),
}

impl EmaSetting {
    /// Applies the setting to `base`. A decay keeps the base EMA mode unless
    /// that mode is off, in which case training on the shadow is used.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            EmaSetting::Off => cfg.ema_mode = EmaMode::Off,
            EmaSetting::Decay(g) => {
                cfg.gamma = g;
                if cfg.ema_mode == EmaMode::Off {
                    cfg.ema_mode = EmaMode::TrainOnEma;
                }
            }
        }
        cfg
    }

    pub fn of(config: &TrainConfig) -> Self {
        match config.ema_mode {
            EmaMode::Off => EmaSetting::Off,
            _ => EmaSetting::Decay(config.gamma),
        }
    }
}

impl fmt::Display for EmaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmaSetting::Off => f.write_str("off"),
            EmaSetting::Decay(g) => write!(f, "{g}"),
        }
    }
}

impl Serialize for EmaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EmaSetting::Off => s.serialize_str("off"),
            EmaSetting::Decay(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for EmaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = EmaSetting;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"off\" or a decay in [0, 1]")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<EmaSetting, E> {
                if v == "off" {
                    Ok(EmaSetting::Off)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<EmaSetting, E> {
                Ok(EmaSetting::Decay(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<EmaSetting, E> {
                Ok(EmaSetting::Decay(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<EmaSetting, E> {
                Ok(EmaSetting::Decay(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

fn all_forms() -> Vec<ConsistencyForm> {
    ConsistencyForm::ALL.to_vec()
}
fn d_trials() -> usize {
    10
}
fn d_threshold() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "all_forms")]
    pub forms: Vec<ConsistencyForm>,
    /// Adds a labeled-only baseline row per condition and EMA setting.
    #[serde(default)]
    pub include_supervised: bool,
    /// Empty means the run's own `condition`.
    #[serde(default)]
    pub conditions: Vec<DataCondition>,
    /// Empty means the EMA setting of the `train` section.
    #[serde(default)]
    pub gammas: Vec<EmaSetting>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    /// Test accuracy counted as a good result.
    #[serde(default = "d_threshold")]
    pub good_threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            forms: all_forms(),
            include_supervised: false,
            conditions: Vec::new(),
            gammas: Vec::new(),
            trials: d_trials(),
            good_threshold: d_threshold(),
        }
    }
}

fn d_condition() -> DataCondition {
    DataCondition::new(10, 1000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "SimConfig::desk")]
    pub sim: SimConfig,
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_condition")]
    pub condition: DataCondition,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::desk(),
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            condition: d_condition(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn arch(&self) -> ArchConfig {
        self.arch.resolve(self.sim.sample_len, self.sim.num_devices)
    }

    /// Checks every section, including that the data condition fits the
    /// simulated training split.
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.arch().validate()?;
        self.train.validate(self.sim.sample_len)?;
        let (train_per_class, _, _) = split_sizes(self.sim.samples_per_class);
        for c in std::iter::once(&self.condition).chain(&self.bench.conditions) {
            if c.m_labeled_per_class < 1 {
                return Err(Error::config(format!(
                    "condition {c} needs at least one labeled sample per class"
                )));
            }
            if c.m_labeled_per_class + c.n_unlabeled_per_class > train_per_class {
                return Err(Error::config(format!(
                    "condition {c} exceeds the {train_per_class} training samples per class"
                )));
            }
        }
        let b = &self.bench;
        if b.trials < 1 {
            return Err(Error::config("bench.trials must be at least 1"));
        }
        if b.forms.is_empty() && !b.include_supervised {
            return Err(Error::config("bench has nothing to run"));
        }
        if !(0.0..=1.0).contains(&b.good_threshold) {
            return Err(Error::config("bench.good_threshold must lie in [0, 1]"));
        }
        for g in &b.gammas {
            if let EmaSetting::Decay(v) = g {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::config(format!("bench gamma {v} must lie in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates a run configuration.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
