//! Provenance records written next to every artifact.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Upstream {
    pub path: String,
    /// `None` when the input carried no provenance record.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub upstream: Vec<Upstream>,
    pub artifacts: Vec<String>,
}

/// Where the record of `artifact` lives: `provenance.json` inside a
/// directory, or a `.provenance.json` sibling of a file.
pub fn record_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("provenance.json")
    } else {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".provenance.json");
        artifact.with_file_name(name)
    }
}

pub fn read(artifact: &Path) -> Result<Option<Provenance>> {
    let path = record_path(artifact);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let p = serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(p))
}

/// Describes an input artifact by its own recorded hash. Paths inside
/// `workspace` are recorded relative to it so records do not depend on
/// where the workspace lives.
pub fn upstream(artifact: &Path, workspace: &Path) -> Result<Upstream> {
    let record = read(artifact)?;
    if record.is_none() {
        warn!("{} has no provenance record", artifact.display());
    }
    let shown = artifact.strip_prefix(workspace).unwrap_or(artifact);
    Ok(Upstream {
        path: shown.display().to_string(),
        config_hash: record.map(|r| r.config_hash),
    })
}

pub fn write(artifact: &Path, record: &Provenance) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(record)?;
    bytes.push(b'\n');
    texbank::io::write_atomic(record_path(artifact), &bytes)?;
    Ok(())
}

/// Every hash in the lineage of `record` that differs from `expected`.
pub fn lineage_mismatches(record: &Provenance, expected: &str) -> Vec<String> {
    let mut out = Vec::new();
    if record.config_hash != expected {
        out.push(format!(
            "artifact produced with config {}",
            record.config_hash
        ));
    }
    for u in &record.upstream {
        match &u.config_hash {
            Some(h) if h != expected => {
                out.push(format!("input {} produced with config {h}", u.path))
            }
            _ => {}
        }
    }
    out
}
