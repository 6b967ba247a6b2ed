use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, Standardization, VelocityNet};
use crate::error::{Error, Result};
use crate::real::Real;

const FORMAT: &str = "crystalflow-velocity-net";
const VERSION: u32 = 1;

/// Self-describing JSON container for a network. Parameters are stored as
/// `f64` and written with round-trip float formatting, so save and load
/// reproduce every bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub stats: Standardization,
    /// Free-form provenance such as config and base-model hashes.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_net<T: Real>(net: &VelocityNet<T>, meta: BTreeMap<String, String>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: net.config,
            stats: net.stats.clone(),
            meta,
            params: net.params.iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }

    pub fn to_net<T: Real>(&self) -> Result<VelocityNet<T>> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported container {} v{}", self.format, self.version)));
        }
        VelocityNet::from_params(self.config, self.stats.clone(), self.params.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
