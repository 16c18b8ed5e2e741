//! Declarative experiment configuration (JSON). Unknown keys are rejected and
//! every validation error names the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, DatasetSpec};
use crate::ensemble::{ForestParams, ShapleyAggregation, SHAPLEY_SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, BYTES_PER_MB, DEFAULT_MAX_ROUNDS};
use crate::methods::MethodRegistry;
use crate::models::{Arch, TrainParams};
use crate::selection::SelectionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(DatasetSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub arch: Arch,
    /// Encoder width of the feature-level baseline.
    pub feature_hidden_units: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainParams::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            arch: Arch::default(),
            feature_hidden_units: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub shapley_samples: usize,
    pub shapley_aggregation: ShapleyAggregation,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let f = ForestParams::default();
        EnsembleConfig {
            num_trees: f.num_trees,
            max_depth: f.max_depth,
            shapley_samples: SHAPLEY_SAMPLE_CAP,
            shapley_aggregation: ShapleyAggregation::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    /// Average uploaded megabytes (2^20 bytes) per client before stopping.
    pub budget_mb: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_method() -> String {
    "mmfedmc".into()
}

fn default_max_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::invalid_config(if path == "." { String::new() } else { path }, e.inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_json(&text)?;
        // a relative CSV path is taken relative to the config file
        if let DatasetSource::Csv { path: data, .. } = &mut config.dataset {
            if data.is_relative() {
                if let Some(parent) = path.parent() {
                    *data = parent.join(&*data);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate("dataset.synthetic")?;
        }
        MethodRegistry::builtin()
            .get(&self.method)
            .map_err(|e| Error::invalid_config("method", e.to_string()))?;
        self.selection.validate("selection")?;
        let t = &self.training;
        if t.epochs == 0 {
            return Err(Error::invalid_config("training.epochs", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(Error::invalid_config("training.batch_size", "must be at least 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::invalid_config("training.learning_rate", "must be positive"));
        }
        if let Arch::Mlp1 { hidden_units: 0 } = t.arch {
            return Err(Error::invalid_config("training.arch.mlp1.hidden_units", "must be at least 1"));
        }
        if t.feature_hidden_units == 0 {
            return Err(Error::invalid_config("training.feature_hidden_units", "must be at least 1"));
        }
        let e = &self.ensemble;
        if e.num_trees == 0 {
            return Err(Error::invalid_config("ensemble.num_trees", "must be at least 1"));
        }
        if e.shapley_samples == 0 {
            return Err(Error::invalid_config("ensemble.shapley_samples", "must be at least 1"));
        }
        if !(self.budget_mb > 0.0 && self.budget_mb.is_finite()) {
            return Err(Error::invalid_config("budget_mb", "must be positive"));
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid_config("max_rounds", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid_config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid_config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    pub fn budget_bytes(&self) -> f64 {
        self.budget_mb * BYTES_PER_MB
    }

    /// Federation settings for one seed.
    pub fn federation(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            selection: self.selection.clone(),
            training: TrainParams {
                epochs: self.training.epochs,
                batch_size: self.training.batch_size,
                learning_rate: self.training.learning_rate,
            },
            arch: self.training.arch,
            forest: ForestParams {
                num_trees: self.ensemble.num_trees,
                max_depth: self.ensemble.max_depth,
            },
            shapley_aggregation: self.ensemble.shapley_aggregation,
            shapley_samples: self.ensemble.shapley_samples,
            feature_hidden_units: self.training.feature_hidden_units,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"synthetic": {"num_clients": 3, "num_classes": 2,
            "modalities": [{"feature_dim": 2, "informativeness": 1.0}]}},
        "budget_mb": 0.01
    }"#;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.method, "mmfedmc");
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.training.learning_rate, 0.1);
        assert_eq!(c.selection.gamma, 1);
        assert_eq!(c.selection.delta, 0.2);
        assert_eq!(c.selection.alpha_s, 1.0 / 3.0);
        assert_eq!(c.max_rounds, 10_000);
        assert_eq!(c.seeds, vec![0]);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    fn path_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::InvalidConfig { path, .. }) => path,
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn error_paths() {
        let with = |extra: &str| MINIMAL.replacen("\"budget_mb\"", &format!("{extra}, \"budget_mb\""), 1);
        assert_eq!(path_of(&with(r#""selection": {"delta": 0}"#)), "selection.delta");
        assert_eq!(path_of(&with(r#""selection": {"gama": 1}"#)), "selection.gama");
        assert_eq!(path_of(&with(r#""method": "fedprox""#)), "method");
        assert_eq!(path_of(&with(r#""seeds": []"#)), "seeds");
        assert_eq!(path_of(&with(r#""training": {"epochs": 0}"#)), "training.epochs");
        assert_eq!(path_of(&MINIMAL.replace("0.01", "0")), "budget_mb");
        assert_eq!(
            path_of(&MINIMAL.replace("\"num_clients\": 3", "\"num_clients\": 0")),
            "dataset.synthetic.num_clients"
        );
    }
}
