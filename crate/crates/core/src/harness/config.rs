//! Flat key-value experiment configuration with `desk` and `full` profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{GenConfig, TEST_FRACTION, VAL_FRACTION};
use crate::dynamics::DEFAULT_HORIZON;
use crate::event_tree::{InterventionDistribution, TreeConfig, MAX_TREE_DEPTH};
use crate::model::{GraphMode, ScorerConfig, TrainConfig};
use crate::scoring::LabelScheme;
use crate::search::{RandomBaseline, SearchConfig, SearchMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown profile {0:?} (expected \"desk\" or \"full\")")]
    Profile(String),
    #[error("invalid value for {key}: {reason}")]
    Value { key: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Full,
}

/// Every hyperparameter of the pipeline. Keys not given in a config file
/// take the selected profile's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: Profile,
    // data
    pub scenes: usize,
    pub scene_attempts: usize,
    pub min_balls: usize,
    pub max_balls: usize,
    pub min_pins: usize,
    pub max_pins: usize,
    pub max_instructions: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    // trees
    pub sample_count: usize,
    pub max_depth: usize,
    pub horizon: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    // labels and model
    pub label_scheme: String,
    pub graph_mode: String,
    pub layers: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub model_seeds: usize,
    // search and evaluation
    pub search_mode: String,
    pub node_budget: usize,
    pub n_observed: usize,
    pub histogram_bins: usize,
    pub sim_dt: f64,
    pub inspect_depth: usize,
}

impl Config {
    /// Full-scale operating point.
    pub fn full() -> Self {
        Self {
            profile: Profile::Full,
            scenes: 46_000,
            scene_attempts: 10,
            min_balls: 4,
            max_balls: 6,
            min_pins: 0,
            max_pins: 2,
            max_instructions: 5,
            val_fraction: VAL_FRACTION,
            test_fraction: TEST_FRACTION,
            sample_count: 1_000_000,
            max_depth: MAX_TREE_DEPTH,
            horizon: DEFAULT_HORIZON,
            min_speed: 0.5,
            max_speed: 3.0,
            label_scheme: "probabilistic".into(),
            graph_mode: "dag".into(),
            layers: 5,
            hidden: 128,
            batch_size: 8192,
            epochs: 15,
            learning_rate: 1e-3,
            model_seeds: 5,
            search_mode: "max_likelihood".into(),
            node_budget: 80,
            n_observed: 9,
            histogram_bins: RandomBaseline::DEFAULT_BINS,
            sim_dt: 1e-3,
            inspect_depth: 2,
        }
    }

    /// Single-core scale: 2K scenes, 10⁵ samples per tree, a narrower and
    /// shallower scorer trained with smaller batches for fewer epochs, two
    /// model seeds, and a larger held-out share so the test set has about a
    /// thousand instructions.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            scenes: 2_000,
            val_fraction: 0.05,
            test_fraction: 0.1,
            sample_count: 100_000,
            layers: 3,
            hidden: 32,
            batch_size: 256,
            epochs: 4,
            model_seeds: 2,
            ..Self::full()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Full => Self::full(),
        }
    }

    /// Parse a flat TOML document. `profile` picks the defaults (desk when
    /// absent); every other key overrides one field.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        let profile = match table.get("profile") {
            None => Profile::Desk,
            Some(toml::Value::String(s)) => match s.as_str() {
                "desk" => Profile::Desk,
                "full" => Profile::Full,
                other => return Err(ConfigError::Profile(other.to_string())),
            },
            Some(other) => return Err(ConfigError::Profile(other.to_string())),
        };
        let mut merged = toml::Table::try_from(Self::for_profile(profile)).expect("config serializes to a table");
        for (k, v) in table {
            if matches!(v, toml::Value::Table(_) | toml::Value::Array(_)) {
                return Err(ConfigError::Parse(format!("key {k:?} must be a scalar (the config is flat)")));
            }
            // Integers are accepted where floats are expected.
            let v = match (merged.get(&k), v) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, reason: &str| Err(ConfigError::Value { key, reason: reason.to_string() });
        if self.scenes == 0 {
            return bad("scenes", "must be positive");
        }
        if self.scene_attempts == 0 {
            return bad("scene_attempts", "must be positive");
        }
        if !(4..=6).contains(&self.min_balls) || !(self.min_balls..=6).contains(&self.max_balls) {
            return bad("min_balls/max_balls", "need 4 <= min_balls <= max_balls <= 6");
        }
        if self.min_pins > self.max_pins || self.max_pins > 2 {
            return bad("min_pins/max_pins", "need min_pins <= max_pins <= 2");
        }
        if self.max_instructions == 0 {
            return bad("max_instructions", "must be positive");
        }
        for (key, f) in [("val_fraction", self.val_fraction), ("test_fraction", self.test_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(key, "must lie in [0, 1)");
            }
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return bad("val_fraction", "validation and test fractions leave no training scenes");
        }
        if self.sample_count == 0 {
            return bad("sample_count", "must be positive");
        }
        if self.max_depth == 0 || self.max_depth > MAX_TREE_DEPTH {
            return bad("max_depth", "must lie in [1, 30]");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon", "must be positive");
        }
        if !(self.min_speed > 0.0 && self.min_speed <= self.max_speed) {
            return bad("min_speed/max_speed", "need 0 < min_speed <= max_speed");
        }
        if let Err(e) = self.label_scheme.parse::<LabelScheme>() {
            return bad("label_scheme", &e);
        }
        if let Err(e) = self.graph_mode.parse::<GraphMode>() {
            return bad("graph_mode", &e);
        }
        if let Err(e) = self.search_mode.parse::<SearchMode>() {
            return bad("search_mode", &e);
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers/hidden", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.model_seeds == 0 {
            return bad("model_seeds", "must be positive");
        }
        if self.node_budget == 0 {
            return bad("node_budget", "must be at least 1");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins", "must be positive");
        }
        if !(self.sim_dt > 0.0) {
            return bad("sim_dt", "must be positive");
        }
        Ok(())
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            min_balls: self.min_balls,
            max_balls: self.max_balls,
            min_pins: self.min_pins,
            max_pins: self.max_pins,
            speeds: self.interventions(),
            max_instructions: self.max_instructions,
            rollout_depth: self.max_depth,
            horizon: self.horizon,
            ..GenConfig::default()
        }
    }

    pub fn interventions(&self) -> InterventionDistribution {
        InterventionDistribution {
            min_speed: self.min_speed,
            max_speed: self.max_speed,
        }
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            sample_count: self.sample_count,
            max_depth: self.max_depth,
            horizon: self.horizon,
            interventions: self.interventions(),
        }
    }

    pub fn label_scheme(&self) -> LabelScheme {
        self.label_scheme.parse().expect("validated")
    }

    pub fn graph_mode(&self) -> GraphMode {
        self.graph_mode.parse().expect("validated")
    }

    pub fn search_mode(&self) -> SearchMode {
        self.search_mode.parse().expect("validated")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            scorer: ScorerConfig {
                layers: self.layers,
                hidden: self.hidden,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            node_budget: self.node_budget,
            n_observed: self.n_observed,
            mode: self.search_mode(),
            tree: self.tree_config(),
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self::desk()
    }
}
