//! Run manifests: one JSON record per command invocation, written beside the
//! primary output. Re-running with identical config, seed, and scripts must
//! reproduce identical output hashes; `run-all` uses the manifests to skip
//! stages whose inputs are unchanged.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use compliance_core::util::file_sha256;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub provider_calls: BTreeMap<String, usize>,
    pub wall_time_ms: u64,
    /// Stage outcome notes (rejection counts, partial failures).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunManifest {
    /// Manifest sits beside the primary output as `<file>.manifest.json`.
    pub fn path_for(primary_output: &Path) -> PathBuf {
        PathBuf::from(format!("{}.manifest.json", primary_output.display()))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        command: &str,
        config_hash: &str,
        seed: u64,
        inputs: &[&Path],
        outputs: &[&Path],
        provider_calls: BTreeMap<String, usize>,
        wall_time_ms: u64,
        notes: Vec<String>,
    ) -> std::io::Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: hash_files(inputs)?,
            outputs: hash_files(outputs)?,
            provider_calls,
            wall_time_ms,
            notes,
        })
    }

    pub fn write_beside(&self, primary_output: &Path) -> std::io::Result<()> {
        let path = Self::path_for(primary_output);
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// True when the recorded config hash, every input hash, and every output
    /// hash still match the filesystem; the stage can then be skipped.
    pub fn up_to_date(&self, config_hash: &str) -> bool {
        if self.config_hash != config_hash {
            return false;
        }
        for (path, recorded) in self.inputs.iter().chain(self.outputs.iter()) {
            match file_sha256(Path::new(path)) {
                Ok(current) if &current == recorded => {}
                _ => return false,
            }
        }
        true
    }
}

fn hash_files(paths: &[&Path]) -> std::io::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths {
        out.insert(path.display().to_string(), file_sha256(path)?);
    }
    Ok(out)
}

/// True when a stage's previous manifest still matches config and files.
pub fn stage_up_to_date(primary_output: &Path, command: &str, config_hash: &str) -> bool {
    let path = RunManifest::path_for(primary_output);
    match RunManifest::load(&path) {
        Ok(manifest) => manifest.command == command && manifest.up_to_date(config_hash),
        Err(_) => false,
    }
}
