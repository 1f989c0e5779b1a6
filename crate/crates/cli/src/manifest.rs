use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Provenance record written next to every stage output as `run.manifest`.
///
/// Inputs are identified by content hash rather than path, so that two runs
/// over identical inputs in different directories produce identical files.
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_fingerprint: &str) -> Self {
        let mut m = Manifest { lines: Vec::new() };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("seed", seed);
        m.set("config_fingerprint", config_fingerprint);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn input_file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(self.set(&format!("input.{key}"), hex_digest(&bytes)))
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("run.manifest"), self.text()).with_context(|| format!("writing manifest in {}", dir.display()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
