//! `manifest.json`: the one file per artifact directory that may differ
//! between reruns (it carries the timestamps).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::results::CSV_SCHEMA;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub csv_schema: u32,
    pub command: String,
    /// Full argv after `--config` expansion; `wipu replay` reruns it.
    pub argv: Vec<String>,
    /// Resolved settings, defaults included.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Manifest {
    pub fn start(command: &str, argv: &[String], seed: u64) -> Self {
        Manifest {
            tool: "wipu".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            csv_schema: CSV_SCHEMA,
            command: command.into(),
            argv: argv.to_vec(),
            config: BTreeMap::new(),
            seed,
            outputs: Vec::new(),
            started_unix_s: now(),
            finished_unix_s: None,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.into(), value.to_string());
        self
    }

    /// Records an output path relative to the artifact directory.
    pub fn output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn finish(&mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_s = Some(now());
        self.write(dir)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.csv_schema != CSV_SCHEMA {
            bail!("{}: csv_schema {} is not supported (this build reads {CSV_SCHEMA})", path.display(), m.csv_schema);
        }
        Ok(m)
    }
}
