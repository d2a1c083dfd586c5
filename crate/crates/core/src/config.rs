//! Experiment configuration: one JSON document with every block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::{generate_synthetic, CxrRecord, PreprocessConfig};
use crate::error::{Error, Result};
use crate::eval::SplitSpec;
use crate::nn::{NetworkConfig, TrainConfig};
use crate::scoring::TargetKind;

/// Environment variable that overrides the training and split seeds.
pub const SEED_ENV: &str = "CXRS_SEED";

/// Which score kinds an experiment trains networks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetSelection {
    Geographic,
    Opacity,
    #[default]
    Both,
}

impl TargetSelection {
    pub fn kinds(self) -> Vec<TargetKind> {
        match self {
            TargetSelection::Geographic => vec![TargetKind::Geographic],
            TargetSelection::Opacity => vec![TargetKind::Opacity],
            TargetSelection::Both => TargetKind::ALL.to_vec(),
        }
    }
}

/// Raw image size and seed of the synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 80,
            height: 80,
            seed: 2020,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub split: SplitSpec,
    pub target: TargetSelection,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let size = 64;
        Self {
            preprocess: PreprocessConfig {
                target_width: size,
                target_height: size,
                ..PreprocessConfig::default()
            },
            augment: AugmentConfig::mild(),
            network: NetworkConfig::desk(size, size),
            training: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
            split: SplitSpec::default(),
            target: TargetSelection::Both,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; unknown keys are rejected.
    ///
    /// The document is laid over [`ExperimentConfig::default`] key by key, so a
    /// partial block keeps the experiment defaults for the fields it omits.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(vec![e.to_string()]);
        let user: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let mut merged = serde_json::to_value(Self::default()).expect("config serializes");
        overlay(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// One message per offending key.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.preprocess.problems("preprocess.");
        p.extend(self.augment.problems("augment."));
        if let Err(Error::Config(net)) = self.network.shape_plan() {
            p.extend(net.into_iter().map(|m| format!("network.{m}")));
        }
        if (self.network.input_width, self.network.input_height)
            != (self.preprocess.target_width, self.preprocess.target_height)
        {
            p.push(format!(
                "network.input_width/input_height: {}x{} does not match preprocess target {}x{}",
                self.network.input_width,
                self.network.input_height,
                self.preprocess.target_width,
                self.preprocess.target_height
            ));
        }
        p.extend(self.training.problems("training."));
        p.extend(self.split.problems("split."));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Replaces the training and split seeds with `seed` when given.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.training.seed = s;
            self.split.seed = s;
        }
        self
    }

    /// Applies `CXRS_SEED` from the environment, if set.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(vec![format!("{SEED_ENV}: `{v}` is not an unsigned integer")]))?;
                Ok(self.with_seed(Some(seed)))
            }
            Err(_) => Ok(self),
        }
    }

    /// `count` synthetic records, preprocessed for this experiment.
    pub fn synthetic_records(&self, count: usize) -> Result<Vec<CxrRecord>> {
        let s = &self.synthetic;
        generate_synthetic(count, s.seed, s.width, s.height)?
            .into_iter()
            .map(|r| r.preprocessed(&self.preprocess))
            .collect()
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
