//! Output directory bookkeeping. Every file goes through [`Artifacts`],
//! which records its checksum; the manifest holds no timestamps, so two runs
//! of the same config produce byte-identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub quick: bool,
    /// Format version per artifact kind.
    pub formats: BTreeMap<String, u32>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn failed_stages(&self) -> Vec<&str> {
        self.stages.iter().filter(|s| s.status == StageStatus::Failed).map(|s| s.name.as_str()).collect()
    }

    /// Re-hashes every listed file under `root` and returns the paths whose
    /// content no longer matches.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let bytes = std::fs::read(root.join(&f.path)).map_err(|e| io_err(&root.join(&f.path), e))?;
            if sha256_hex(&bytes) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }

    pub fn load(root: &Path) -> Result<RunManifest> {
        let p = root.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { context: path.display().to_string(), source }
}

/// Serialized writer for one output directory.
pub struct Artifacts {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
    stages: Vec<StageRecord>,
    current: String,
    prefix: String,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Artifacts> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Artifacts {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
            stages: Vec::new(),
            current: String::new(),
            prefix: String::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Later relative paths are placed under `dir` (empty for the root).
    pub fn set_subdir(&mut self, dir: &str) {
        self.prefix = if dir.is_empty() { String::new() } else { format!("{}/", dir.trim_end_matches('/')) };
    }

    /// Files written from now on are attributed to `name`.
    pub fn begin(&mut self, name: &str) {
        self.current = name.to_string();
    }

    pub fn finish(&mut self, name: &str, outcome: std::result::Result<(), String>) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            status: if outcome.is_ok() { StageStatus::Ok } else { StageStatus::Failed },
            error: outcome.err(),
        });
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(format!("{}{rel}", self.prefix))
    }

    /// Path for `rel` with its parent directory created, for writers that
    /// open files themselves; follow with [`Artifacts::adopt`].
    pub fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(p)
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        let rel = &format!("{}{rel}", self.prefix);
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                stage: self.current.clone(),
            },
        );
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.prepare(rel)?;
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        self.record(rel, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Records a file some other writer already put under the root.
    pub fn adopt(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    /// Writes `manifest.json` and returns it.
    pub fn seal(self, command: &str, cfg: &RunConfig) -> Result<RunManifest> {
        let formats = BTreeMap::from([
            ("csv".to_string(), chargenoise::io::FORMAT_VERSION),
            ("binary_grid".to_string(), 1),
            ("json_report".to_string(), 1),
            ("manifest".to_string(), MANIFEST_VERSION),
        ]);
        let m = RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: cfg.digest(),
            seed: cfg.seed,
            quick: cfg.quick,
            formats,
            stages: self.stages,
            files: self.files.into_values().collect(),
        };
        let p = self.root.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        Ok(m)
    }
}
