use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trouspi::data::write_atomic;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command run: enough to repeat it and check the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Effective configuration after command-line overrides.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_seconds: f64,
    pub finished_unix_seconds: u64,
    pub library_version: String,
}

pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    started: Instant,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes.len() as u64))
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            started: Instant::now(),
        }
    }

    /// Hashes `artifacts` and writes the manifest atomically to `path`.
    pub fn finish(
        self,
        path: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        artifacts: &[&Path],
    ) -> Result<RunManifest, CliError> {
        let artifacts = artifacts
            .iter()
            .map(|p| {
                let (sha256, bytes) = sha256_file(p)?;
                Ok(Artifact {
                    path: p.to_path_buf(),
                    sha256,
                    bytes,
                })
            })
            .collect::<Result<_, CliError>>()?;
        let manifest = RunManifest {
            command: self.command,
            args: self.args,
            config,
            seed,
            artifacts,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            finished_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            library_version: trouspi::VERSION.to_string(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(trouspi::Error::from)?;
        write_atomic(path, |w| w.write_all(text.as_bytes()))?;
        Ok(manifest)
    }
}

/// `<file>.manifest.json` next to a single-file artifact.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
