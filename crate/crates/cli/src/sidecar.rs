//! JSON sidecars recording how each output was produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form of a configuration.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    output.with_file_name(name)
}

/// Writes `<output>.json` next to `output`.
pub fn write_sidecar(output: &Path, record: &serde_json::Value) -> Result<PathBuf> {
    let path = sidecar_path(output);
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(sidecar_path(Path::new("out/sheet.png")), PathBuf::from("out/sheet.png.json"));
    }
}
