//! TOML run configuration.
//!
//! ```toml
//! [engine]
//! stride = 8
//! epsilon = 0.1
//!
//! [simulation]
//! rounds = 4
//!
//! [simulation.robot]
//! mode = "gt-worst"
//! seed = 7
//!
//! [synthetic]
//! num_frames = 20
//! ```
//!
//! Every table and key is optional; missing ones take the defaults.
//! Unknown keys are errors.

use std::path::Path;

use relvos_core::synthetic::SyntheticConfig;
use relvos_core::{EngineConfig, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub simulation: SimulationConfig,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| IoError::format("configuration", e))?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
