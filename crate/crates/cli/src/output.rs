//! CSV files with a '#' manifest block, plus a JSON manifest per run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub figure: Option<String>,
    pub tool_version: String,
    pub argv: Vec<String>,
    pub scene_file: Option<String>,
    pub scene_hash: Option<String>,
    /// Fully resolved scene, defaults filled in.
    pub scene: Option<serde_json::Value>,
    pub parameters: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, figure: Option<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            figure,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: std::env::args().collect(),
            scene_file: None,
            scene_hash: None,
            scene: None,
            parameters: BTreeMap::new(),
            seeds: Vec::new(),
            started_unix: now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    /// Comment block for CSV headers; no timestamps so reruns are byte-identical.
    fn comment_block(&self) -> String {
        let mut out = format!("# command: {}\n# tool_version: {}\n", self.command, self.tool_version);
        if let Some(f) = &self.figure {
            out += &format!("# figure: {f}\n");
        }
        if let Some(h) = &self.scene_hash {
            out += &format!("# scene_hash: {h}\n");
        }
        for (k, v) in &self.parameters {
            out += &format!("# {k}: {v}\n");
        }
        if !self.seeds.is_empty() {
            let s: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            out += &format!("# seeds: {}\n", s.join(" "));
        }
        out
    }
}

/// Collects output files of one run and writes the manifest last.
pub struct Writer {
    dir: PathBuf,
    stem: String,
    pub manifest: RunManifest,
}

impl Writer {
    pub fn new(dir: &Path, stem: &str, manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), stem: stem.to_string(), manifest })
    }

    /// Write `<stem><suffix>.csv` with the manifest block, `header` and `rows`.
    pub fn csv(&mut self, suffix: &str, header: &str, rows: &[String]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{}{suffix}.csv", self.stem));
        let mut text = self.manifest.comment_block();
        text += header;
        text.push('\n');
        for r in rows {
            text += r;
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        self.manifest.finished_unix = now();
        self.manifest.outputs.push(path.display().to_string());
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Validation(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
