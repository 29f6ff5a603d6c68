//! Config hashing, manifest lines and the overwrite guard.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the config's canonical JSON
/// (object keys sorted).
pub fn config_hash<T: Serialize>(config: &T) -> anyhow::Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(config)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string())
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone)]
pub struct RunStamp {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl RunStamp {
    /// JSON placed after `# manifest: ` in every CSV.
    pub fn manifest_line(&self) -> String {
        json!({"command": self.command, "config_hash": self.config_hash, "seed": self.seed}).to_string()
    }
}

fn existing_hash(path: &Path) -> Option<String> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        let v: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path).ok()?)).ok()?;
        return v.get("config_hash")?.as_str().map(str::to_string);
    }
    let mut line = String::new();
    BufReader::new(File::open(path).ok()?).read_line(&mut line).ok()?;
    let v: serde_json::Value = serde_json::from_str(line.strip_prefix("# manifest: ")?.trim()).ok()?;
    v.get("config_hash")?.as_str().map(str::to_string)
}

/// Fails if any of `outputs` exists and was produced under a different config
/// hash, unless `force` is set.
pub fn guard_outputs(outputs: &[PathBuf], hash: &str, force: bool) -> anyhow::Result<()> {
    if force {
        return Ok(());
    }
    for p in outputs.iter().filter(|p| p.exists()) {
        match existing_hash(p) {
            Some(h) if h == hash => {}
            Some(h) => bail!(
                "refusing to overwrite {} (written by config {h}, current config {hash}); use --force",
                p.display()
            ),
            None => bail!("refusing to overwrite {} (no config hash found); use --force", p.display()),
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
