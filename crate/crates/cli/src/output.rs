//! Output directory handling: atomic file writes and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use symcrit::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub subcommand: String,
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_s: f64,
    pub threads: usize,
    pub exit_code: i32,
    pub stages: Vec<Stage>,
    pub files: Vec<FileEntry>,
}

pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
    pub stages: Vec<Stage>,
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            stages: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn stage(&mut self, name: &str, status: &str, detail: Option<String>) {
        self.stages.push(Stage {
            name: name.to_string(),
            status: status.to_string(),
            detail,
        });
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        manifest.stages = std::mem::take(&mut self.stages);
        manifest.files = std::mem::take(&mut self.files);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}
