use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seeds: Vec<u64>,
    pub revision: String,
    pub out_dir: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Files written so far, relative to `out_dir`.
    pub outputs: Vec<String>,
}

/// `git rev-parse` of the working directory, else `MADGNN_REVISION`, else "unknown".
pub fn revision() -> String {
    let git = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    git.or_else(|| std::env::var("MADGNN_REVISION").ok()).unwrap_or_else(|| "unknown".into())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Output directory plus the manifest describing what has been written into it.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config_hash: Option<String>, seeds: Vec<u64>) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(io_error(root))?;
        let manifest = RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash,
            seeds,
            revision: revision(),
            out_dir: root.display().to_string(),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            error: None,
            outputs: Vec::new(),
        };
        let dir = Self { root: root.to_path_buf(), manifest };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Registers a file that has just been written.
    pub fn record(&mut self, relative: &str) {
        if !self.manifest.outputs.iter().any(|o| o == relative) {
            self.manifest.outputs.push(relative.to_string());
        }
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_error(parent))?;
        }
        std::fs::write(&path, serde_json::to_string_pretty(value)?).map_err(io_error(&path))?;
        self.record(relative);
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, relative: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        let path = self.path(relative);
        let mut w = csv::Writer::from_path(&path)?;
        let mut any = false;
        for row in rows {
            w.serialize(row)?;
            any = true;
        }
        if !any {
            w.write_record(header_of::<T>())?;
        }
        w.flush().map_err(io_error(&path))?;
        self.record(relative);
        Ok(())
    }

    pub fn write_text(&mut self, relative: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(relative);
        std::fs::write(&path, text).map_err(io_error(&path))?;
        self.record(relative);
        Ok(())
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let path = self.root.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).map_err(io_error(&path))
    }

    pub fn finish(mut self, result: Result<(), CliError>) -> Result<(), CliError> {
        self.manifest.finished_at = Some(now());
        match &result {
            Ok(()) => self.manifest.status = RunStatus::Completed,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.write_manifest()?;
        result
    }
}

/// Column names of a CSV row type, for files that end up with no rows.
fn header_of<T>() -> Vec<&'static str> {
    let name = std::any::type_name::<T>();
    let cols: &[&str] = if name.ends_with("CurveRow") {
        &["iteration", "seed", "mean_reward", "std_reward", "policy_loss", "value_loss", "entropy", "wall_s"]
    } else if name.ends_with("NormRow") {
        &["n_agents", "run", "t", "state_norm"]
    } else if name.ends_with("TransferRow") {
        &["n_agents", "episode", "reward"]
    } else if name.ends_with("BoundRow") {
        &["trial", "bound", "measured", "margin"]
    } else {
        &[]
    };
    cols.to_vec()
}
