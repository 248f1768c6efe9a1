use std::path::{Path, PathBuf};

use cardiosim_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record emitted next to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// SHA-256 over the contents of every input file, in argument order.
    pub config_digest: String,
    pub tool_version: String,
    pub timestamp: String,
}

/// Digest of input file contents. Each file contributes its length and
/// bytes so concatenation boundaries are unambiguous.
pub fn digest_inputs(inputs: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in inputs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(subcommand: &str, inputs: &[PathBuf]) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            config_digest: digest_inputs(inputs)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serialises")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
