//! The pipeline config file shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::jointlearn::JlConfig;
use crate::labelmodels::TrainConfig;
use crate::subset::{Method, Similarity};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetConfig {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub similarity: Similarity,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        SubsetConfig {
            method: Method::Fl,
            k: 100,
            seed: 0,
            similarity: Similarity::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// When set, overrides the seed of every section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub cage: TrainConfig,
    pub jl: JlConfig,
    pub subset: SubsetConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut cfg: Config =
            serde_json::from_str(s).map_err(|e| Error::config(format!("config: {e}")))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        cfg.cage.validate()?;
        cfg.jl.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.cage.seed = seed;
        self.jl.seed = seed;
        self.subset.seed = seed;
        self.synth.seed = seed;
    }
}
