//! Every run leaves a `<command>.manifest.json` beside its artifacts: what
//! ran, with which effective settings and seed, and what it produced. A run
//! can be reproduced from its manifest alone (timestamps aside).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use vibra_core::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub settings: BTreeMap<String, String>,
    pub status: String,
    pub artifacts: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(
        command: &str,
        config: Option<&Path>,
        seed: u64,
        out_dir: &Path,
        settings: BTreeMap<String, String>,
    ) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: config.map(|p| p.display().to_string()),
            seed,
            out_dir: out_dir.display().to_string(),
            settings,
            status: String::from("ok"),
            artifacts: Vec::new(),
            started_unix_s: now_unix(),
            finished_unix_s: 0,
        }
    }

    pub fn record(&mut self, artifact: &Path) {
        self.artifacts.push(artifact.display().to_string());
    }

    /// Writes the manifest into the output directory and returns its path.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_unix_s = now_unix();
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, json)?;
        Ok(path)
    }

    /// Same as [`finish`](Self::finish) but records why the run died first;
    /// artifact paths that never materialized are dropped.
    pub fn finish_failed(mut self, out_dir: &Path, reason: &str) -> Result<PathBuf> {
        self.status = reason.to_string();
        self.artifacts.retain(|p| Path::new(p).exists());
        self.finish(out_dir)
    }
}
