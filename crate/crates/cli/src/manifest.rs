//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::io::write_json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand and its semantic parameters, independent of file locations.
    pub command: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputRecord>,
    /// SHA-256 over tool, version, command, config digest and seeds.
    pub manifest_hash: String,
    pub created_at: String,
}

#[derive(Serialize)]
struct HashedFields<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a [String],
    config_sha256: Option<&'a str>,
    seeds: &'a BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: Option<&LoadedConfig>, seeds: BTreeMap<String, u64>) -> Self {
        let mut m = Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_path: config.map(|c| c.path.clone()),
            config_sha256: config.map(|c| c.sha256.clone()),
            seeds,
            outputs: Vec::new(),
            manifest_hash: String::new(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        m.manifest_hash = m.reproducible_hash();
        m
    }

    /// Excludes timestamps, paths and output digests, so identical runs agree.
    pub fn reproducible_hash(&self) -> String {
        let fields = HashedFields {
            tool: &self.tool,
            version: &self.version,
            command: &self.command,
            config_sha256: self.config_sha256.as_deref(),
            seeds: &self.seeds,
        };
        let bytes = serde_json::to_vec(&fields).expect("manifest fields serialise");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn record_output(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(OutputRecord {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

/// `<out>.manifest.json` next to a single-file output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_timestamp_and_outputs() {
        let seeds = BTreeMap::from([("seed".to_string(), 7)]);
        let mut a = RunManifest::new(vec!["gen".into()], None, seeds.clone());
        let mut b = RunManifest::new(vec!["gen".into()], None, seeds);
        a.created_at = "then".into();
        b.created_at = "now".into();
        b.outputs.push(OutputRecord {
            path: "x".into(),
            sha256: "00".into(),
        });
        assert_eq!(a.reproducible_hash(), b.reproducible_hash());
        assert_eq!(a.manifest_hash, a.reproducible_hash());
    }

    #[test]
    fn hash_tracks_seeds_and_command() {
        let one = RunManifest::new(vec!["gen".into()], None, BTreeMap::from([("seed".into(), 1)]));
        let two = RunManifest::new(vec!["gen".into()], None, BTreeMap::from([("seed".into(), 2)]));
        let other = RunManifest::new(vec!["learn".into()], None, BTreeMap::from([("seed".into(), 1)]));
        assert_ne!(one.manifest_hash, two.manifest_hash);
        assert_ne!(one.manifest_hash, other.manifest_hash);
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar_path(Path::new("out/data.csv")), Path::new("out/data.csv.manifest.json"));
    }
}
