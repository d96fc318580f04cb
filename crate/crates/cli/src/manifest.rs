use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use varigan::Error;

/// Record of one command invocation, written last into its output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(
        command: impl Into<String>,
        config_digest: String,
        seed: u64,
        started_at: String,
    ) -> Self {
        Self {
            command: command.into(),
            config_digest,
            seed,
            started_at,
            finished_at: String::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn file_name(&self) -> String {
        format!("run-{}.json", self.command.replace(' ', "-"))
    }

    /// Stamps the finish time and writes `run-<command>.json` into `dir`.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf, Error> {
        self.finished_at = now();
        let path = dir.join(self.file_name());
        let json = serde_json::to_vec_pretty(&self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
