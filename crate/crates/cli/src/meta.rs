//! `run.meta`: provenance written next to every command's outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

pub struct RunMeta {
    command: String,
    config_hash: String,
    seeds: Vec<(String, String)>,
    started: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunMeta {
    pub fn start(command: &str, config_hash: &str) -> Self {
        RunMeta {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seeds: Vec::new(),
            started: now(),
        }
    }

    pub fn seed(mut self, name: &str, value: impl ToString) -> Self {
        self.seeds.push((name.to_string(), value.to_string()));
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = format!(
            "command = \"{}\"\nconfig_hash = \"{}\"\ncode_version = \"{}\"\n",
            self.command,
            self.config_hash,
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in &self.seeds {
            s.push_str(&format!("seed.{k} = \"{v}\"\n"));
        }
        s.push_str(&format!("started_unix = {}\nfinished_unix = {}\n", self.started, now()));
        let path = dir.join("run.meta");
        std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
    }
}
