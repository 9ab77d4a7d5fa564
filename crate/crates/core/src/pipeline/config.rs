use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{default_lambda_grid, Metric};
use crate::error::{RedError, Result};
use crate::model::{ArchitectureConfig, SemanticTap};
use crate::seed;
use crate::signal::DatasetConfig;
use crate::trainer::{ablate, LossTerm, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Optional overrides of the default architecture for the dataset's length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSection {
    /// Encoder depth; the deepest valid one when absent.
    pub depth: Option<usize>,
    pub semantic_tap: SemanticTap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub lambda_grid: Vec<f64>,
    pub metric: Metric,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            lambda_grid: default_lambda_grid(),
            metric: Metric::Euclidean,
        }
    }
}

/// What the LOF and isolation-forest baselines score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineInput {
    /// The same semantic features the detector uses.
    #[default]
    Semantic,
    /// Flattened normalized IQ records.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Test-time noise levels in dB; `inf` evaluates the records as stored.
    pub snr_db: Vec<f64>,
    pub baseline_input: BaselineInput,
    pub lof_k: usize,
    pub iforest_trees: usize,
    pub iforest_psi: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            snr_db: vec![0.0, 20.0, 30.0],
            baseline_input: BaselineInput::Semantic,
            lof_k: 20,
            iforest_trees: 100,
            iforest_psi: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Loss terms whose weight is forced to zero for this run.
    pub drop: Vec<LossTerm>,
}

/// Everything a run depends on. `seed` is the master seed: the dataset,
/// training, initialization and test-noise streams are all derived from it,
/// and the `seed` fields inside `dataset` and `train` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            dataset: DatasetConfig::default(),
            architecture: ArchitectureSection::default(),
            train: TrainConfig::default(),
            detect: DetectSection::default(),
            eval: EvalSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| RedError::Config(format!("{e}")))?;
        for section in ["dataset", "train"] {
            if table.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(RedError::Config(format!(
                    "`{section}.seed` is not allowed; set the top-level `seed` instead"
                )));
            }
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RedError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Canonical TOML; the ignored section seeds are left out so the text
    /// parses back.
    pub fn to_toml(&self) -> Result<String> {
        let err = |e: &dyn std::fmt::Display| RedError::Config(format!("{e}"));
        let mut table = toml::Table::try_from(self).map_err(|e| err(&e))?;
        for section in ["dataset", "train"] {
            if let Some(toml::Value::Table(t)) = table.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).map_err(|e| err(&e))
    }

    /// SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RedError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dataset.validate()?;
        self.train_config()?.validate()?;
        self.architecture()?.validate()?;
        let grid = &self.detect.lambda_grid;
        if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RedError::Config("lambda_grid must be positive, finite and strictly ascending".into()));
        }
        if self.eval.snr_db.is_empty() || self.eval.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(RedError::Config("eval.snr_db must list at least one SNR".into()));
        }
        if self.eval.lof_k == 0 || self.eval.iforest_trees == 0 || self.eval.iforest_psi < 2 {
            return Err(RedError::Config("lof_k and iforest_trees must be ≥ 1, iforest_psi ≥ 2".into()));
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: seed::derive(self.seed, "dataset", 0),
            ..self.dataset.clone()
        }
    }

    /// Training settings with the ablation applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = TrainConfig {
            seed: seed::derive(self.seed, "train", 0),
            ..self.train.clone()
        };
        ablate(&base, &self.ablation.drop)
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, "init", 0)
    }

    pub fn noise_seed(&self) -> u64 {
        seed::derive(self.seed, "test-noise", 0)
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        let mut arch = ArchitectureConfig::for_input(self.dataset.length, self.dataset.n_known);
        if let Some(d) = self.architecture.depth {
            arch.encoder_depth = d;
        }
        arch.semantic_tap = self.architecture.semantic_tap;
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str("schema_version = 1\nseed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.eval.snr_db, vec![0.0, 20.0, 30.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_toml_str("schema_version = 1\nseed = 1\n[train]\nlambda_mes = 0.5\n");
        assert!(e.is_err());
        let e = ExperimentConfig::from_toml_str("schema_version = 1\nseed = 1\ncolour = 3\n");
        assert!(e.is_err());
    }

    #[test]
    fn section_seeds_rejected() {
        assert!(ExperimentConfig::from_toml_str("schema_version = 1\nseed = 1\n[dataset]\nseed = 3\n").is_err());
    }

    #[test]
    fn wrong_schema_rejected() {
        assert!(ExperimentConfig::from_toml_str("schema_version = 2\nseed = 1\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 99;
        cfg.ablation.drop = vec![LossTerm::Mse];
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}
