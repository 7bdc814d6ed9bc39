//! Run configuration: a TOML file with `[model]`, `[train]` and `[codec]`
//! sections. Missing keys take their defaults; unknown keys are errors.

use crate::codec::container::{Mode, TimesMode};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub mode: Mode,
    pub precision: usize,
    pub times: TimesMode,
    pub prune: bool,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { mode: Mode::Lossy, precision: 256, times: TimesMode::Raw, prune: true, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub codec: CodecConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }
}
