//! Run manifest: resolved config, input fingerprints, artifact paths,
//! and wall-clock timings. Written atomically (temp file + rename) at run
//! start and refreshed with the duration at the end, so a run is
//! reproducible from its manifest alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub duration_ms: Option<u128>,
    #[serde(skip)]
    started: Instant,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("fingerprinting {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn start(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Self {
        let input_records = inputs
            .iter()
            .map(|p| InputRecord {
                path: p.display().to_string(),
                sha256: sha256_file(p).unwrap_or_else(|_| "<unreadable>".into()),
            })
            .collect();
        Self {
            tool: "ramm",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config,
            inputs: input_records,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            duration_ms: None,
            started: Instant::now(),
        }
    }

    /// Fingerprint an artifact produced mid-run (synth outputs).
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.duration_ms = Some(self.started.elapsed().as_millis());
        self.write(path)
    }
}
