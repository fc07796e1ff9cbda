//! Run manifest: which stages finished, on which inputs, and where their
//! artifacts live.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ramp_core::prompting::PromptMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_digest: String,
    pub completed: bool,
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One (mode, k) setting and the run tags of its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRecord {
    pub mode: PromptMode,
    pub k: usize,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
    /// Settings by name, e.g. `base-k16`.
    #[serde(default)]
    pub settings: BTreeMap<String, SettingRecord>,
    /// Setting names of the last sweep, in row order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<String>,
}

impl RunManifest {
    pub fn path(output_dir: &Path) -> PathBuf {
        output_dir.join(MANIFEST_FILE)
    }

    /// Loads the manifest in `output_dir`, or starts a fresh one. Stage
    /// records survive config changes; their input digests decide reuse.
    pub fn load_or_new(output_dir: &Path, config_digest: &str) -> Result<Self, CliError> {
        let path = Self::path(output_dir);
        let mut m = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        } else {
            RunManifest::default()
        };
        m.config_digest = config_digest.to_string();
        Ok(m)
    }

    pub fn save(&self, output_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(output_dir).map_err(|e| CliError::io(output_dir, e))?;
        let path = Self::path(output_dir);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// True when `stage` completed on exactly `input_digest` and all its
    /// artifacts still exist.
    pub fn is_fresh(&self, stage: &str, input_digest: &str) -> bool {
        self.stages.get(stage).is_some_and(|s| {
            s.completed && s.input_digest == input_digest && s.artifacts.iter().all(|a| a.exists())
        })
    }

    pub fn record(&mut self, stage: &str, record: StageRecord) {
        self.stages.insert(stage.to_string(), record);
    }
}
