//! Artifact writer: every file carries the config hash, and optionally a timestamp.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, ExperimentConfig};

pub struct Artifacts {
    dir: PathBuf,
    hash: [u8; 32],
    hash_hex: String,
    generated_unix: Option<u64>,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let dir = cfg.output.dir.clone();
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
        let generated_unix = cfg.output.timestamp.then(|| {
            SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
        });
        Ok(Artifacts { dir, hash: cfg.hash(), hash_hex: cfg.hash_hex(), generated_unix })
    }

    pub fn hash(&self) -> &[u8; 32] {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Output { path: path.clone(), source })?;
        Ok(path)
    }

    /// CSV with `#` header lines ahead of the column row.
    pub fn csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let mut s = format!("# config_hash={}\n", self.hash_hex);
        if let Some(t) = self.generated_unix {
            s.push_str(&format!("# generated_unix={t}\n"));
        }
        s.push_str(body);
        self.write(name, s.as_bytes())
    }

    /// JSON object holding the report fields plus `command` and `config_hash`.
    pub fn json<T: Serialize>(&self, name: &str, command: &str, report: &T) -> Result<PathBuf, CliError> {
        let mut map = match serde_json::to_value(report).expect("report serializes") {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("report".into(), other);
                m
            }
        };
        map.insert("command".into(), Value::from(command));
        map.insert("config_hash".into(), Value::from(self.hash_hex.clone()));
        if let Some(t) = self.generated_unix {
            map.insert("generated_unix".into(), Value::from(t));
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn binary(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        self.write(name, bytes)
    }
}

pub fn describe(path: &Path) -> String {
    format!("wrote {}", path.display())
}
