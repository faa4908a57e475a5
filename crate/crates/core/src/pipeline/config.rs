use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::TrainConfig;
use crate::doping::DopingSchedule;
use crate::relabel::IgnorePolicy;
use crate::search::SearchConfig;
use crate::synth::SynthConfig;

use super::PipelineError;

/// Where the raw, anchor, and test corpora come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generate a raw pool and a disjoint gold pool, then sample from them.
    Synthetic {
        /// Generator settings for the raw pool. `seed` and `id_prefix` are
        /// replaced by values derived from the master seed.
        #[serde(default)]
        synth: SynthConfig,
        /// Raw pool size before stratified sampling.
        #[serde(default = "default_raw_pool")]
        raw_pool: usize,
        #[serde(default = "default_per_class")]
        raw_per_class: usize,
        /// Gold pool size; anchor and test sets are drawn from it.
        #[serde(default = "default_gold_pool")]
        gold_pool: usize,
        #[serde(default = "default_n_val")]
        n_val: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
    },
    /// Load corpora from corpus-format files.
    Files {
        raw: PathBuf,
        anchor: PathBuf,
        test: PathBuf,
    },
}

fn default_raw_pool() -> usize {
    40_000
}

fn default_per_class() -> usize {
    10_000
}

fn default_gold_pool() -> usize {
    4_000
}

fn default_n_val() -> usize {
    100
}

fn default_n_test() -> usize {
    1_000
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            synth: SynthConfig::default(),
            raw_pool: default_raw_pool(),
            raw_per_class: default_per_class(),
            gold_pool: default_gold_pool(),
            n_val: default_n_val(),
            n_test: default_n_test(),
        }
    }
}

/// Full pipeline configuration. Per-stage `seed` fields are ignored; every
/// stage seed is derived from `seed` so a run is reproducible from one number.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Artifact directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    pub doping: DopingSchedule,
    pub sub_model: TrainConfig,
    pub final_model: TrainConfig,
    pub search: SearchConfig,
    pub naive_ignore_policy: IgnorePolicy,
    /// Persist every sub-model checkpoint, not just final ones.
    pub save_all_checkpoints: bool,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let wrap = |e: String| PipelineError::Config(e);
        self.doping.validate().map_err(|e| wrap(e.to_string()))?;
        self.sub_model.validate().map_err(|e| wrap(format!("sub_model: {e}")))?;
        self.final_model.validate().map_err(|e| wrap(format!("final_model: {e}")))?;
        self.search.validate().map_err(|e| wrap(e.to_string()))?;
        if let DataSource::Synthetic {
            synth,
            raw_pool,
            raw_per_class,
            gold_pool,
            ..
        } = &self.data
        {
            let check = SynthConfig {
                n_samples: (*raw_pool).max(*gold_pool),
                ..synth.clone()
            };
            check.validate().map_err(|e| wrap(e.to_string()))?;
            if *raw_per_class == 0 {
                return Err(wrap("raw_per_class must be positive".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form without `out_dir`, hex encoded, so
    /// the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let canonical = PipelineConfig {
            out_dir: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Independent per-stage seed derived from the master seed.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
