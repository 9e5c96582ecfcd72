//! The per-run output manifest.

use std::collections::BTreeMap;
use std::path::Path;

use crate::Result;

/// File name of the manifest written into every output directory.
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// What a command consumed and produced. Serialized with sorted keys, so
/// re-runs are byte-identical.
#[derive(Debug, Clone)]
pub struct RunManifest {
    command: String,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn seed_value(&self) -> Option<u64> {
        self.seed
    }

    pub fn input(&mut self, key: &str, value: impl ToString) {
        self.inputs.insert(key.to_string(), value.to_string());
    }

    /// Record an output path relative to the output directory.
    pub fn output(&mut self, rel: &str) {
        self.outputs.push(rel.to_string());
    }

    /// Write `run_manifest.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "command": self.command,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let path = out_dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(&doc)
            .expect("run manifest is always serializable");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| hyface_core::Error::io(&path, e))?;
        Ok(())
    }
}
