use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written to `<out>/manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every configuration key with its effective value.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: String,
    pub finished: String,
    /// SHA-256 of every output file, keyed by path.
    pub checksums: BTreeMap<String, String>,
    pub exit_code: u8,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    /// Fills in `checksums` from the files listed in `outputs`. Outputs that
    /// were never written (a failed run) are skipped.
    pub fn checksum_outputs(&mut self) -> CliResult<()> {
        self.checksums.clear();
        for p in &self.outputs {
            if p.is_file() {
                self.checksums
                    .insert(p.display().to_string(), sha256_file(p)?);
            }
        }
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
