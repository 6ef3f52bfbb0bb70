use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::error::Code;
use crate::VERSION;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
struct ManifestError {
    code: &'static str,
    message: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    /// The fully resolved config, after the file, flags and `--set`.
    config: Value,
    inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    outputs: Vec<String>,
    status: &'static str,
    error: Option<ManifestError>,
}

/// Output directory plus the manifest describing the run. The manifest is
/// written when the run starts, whenever the config is resolved, and at
/// the end, on success or failure.
pub struct Ctx {
    pub out: PathBuf,
    manifest: RunManifest,
}

impl Ctx {
    pub fn new(command: &'static str, out: PathBuf) -> Self {
        let manifest = RunManifest {
            tool: "untangle",
            version: VERSION,
            command,
            argv: std::env::args().collect(),
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            status: "running",
            error: None,
        };
        Self { out, manifest }
    }

    pub fn start(&mut self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        self.write()
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        self.write()
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.to_string(), path.display().to_string());
    }

    /// Path of an output file under `--out`, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn finish(&mut self, error: Option<(Code, String)>) -> Result<()> {
        self.manifest.status = if error.is_some() { "failed" } else { "ok" };
        self.manifest.error = error.map(|(code, message)| ManifestError { code: code.as_str(), message });
        self.write()
    }

    fn write(&self) -> Result<()> {
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }
}
