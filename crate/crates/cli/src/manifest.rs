use crate::error::{io_err, PipelineError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// What ran, with which tool version, and what each stage produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Tool and on-disk format versions.
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
}

impl Manifest {
    pub fn load_or_new(path: &Path, seed: u64) -> Result<Self> {
        let mut m = if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        m.tool = env!("CARGO_PKG_NAME").into();
        m.version = env!("CARGO_PKG_VERSION").into();
        m.seed = seed;
        m.versions = [
            ("dvfcast", env!("CARGO_PKG_VERSION")),
            ("checkpoint", std::str::from_utf8(dvfcast_core::model::CHECKPOINT_MAGIC).unwrap_or("?")),
            ("sequences", "SEQ1"),
            ("volumes", "VOL1"),
            ("masks", "MSK1"),
            ("fields", "DVF1"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Ok(m)
    }

    pub fn record(&mut self, stage: &str, entries: impl IntoIterator<Item = (String, String)>) {
        self.stages.insert(stage.into(), entries.into_iter().collect());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text).map_err(io_err(path))
    }
}
