//! Run directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// `git describe`-style version embedded at build time.
pub const VERSION: &str = env!("JEQ_VERSION");

/// First 8 hex digits of the SHA-256 of the canonical config JSON (sorted keys).
pub fn config_hash(config: &Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// Creates `<out>/<UTC timestamp>-<hash8>`, adding a numeric suffix on collision.
pub fn create_run_dir(out: &Path, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{hash}");
    for k in 0.. {
        let name = if k == 0 {
            base.clone()
        } else {
            format!("{base}-{k}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(e).with_context(|| format!("creating run directory {}", dir.display()))
            }
        }
    }
    unreachable!()
}

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub wall_s: f64,
}

/// Everything recorded about one run; written as manifest.json.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub task: String,
    pub started_utc: String,
    pub config_hash: String,
    pub config: Value,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<Stage>,
    pub flags: Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(task: &str, config: Value) -> Self {
        Manifest {
            version: VERSION.to_string(),
            task: task.to_string(),
            started_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            config_hash: config_hash(&config),
            config,
            status: "running".into(),
            error: None,
            stages: Vec::new(),
            flags: json!({}),
            outputs: Vec::new(),
        }
    }

    /// Runs one stage, recording its wall time even when it fails.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f(self);
        self.stages.push(Stage {
            name: name.to_string(),
            wall_s: start.elapsed().as_secs_f64(),
        });
        r
    }

    pub fn flag(&mut self, key: &str, value: impl Serialize) {
        self.flags[key] = serde_json::to_value(value).unwrap_or(Value::Null);
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n").context("writing manifest.json")
    }
}

/// Serialized console output shared by concurrent runs.
pub fn log(label: &str, msg: &str) {
    use std::io::Write;
    let stderr = std::io::stderr();
    let mut lock = stderr.lock();
    let _ = writeln!(lock, "[{label}] {msg}");
}
