//! Output directories: every artifact written through [`OutputDir`] is
//! hashed, and [`OutputDir::finish`] records the hashes together with the
//! resolved configuration in `manifest.json` (plus `config.toml`, which can
//! be passed back through `--config` to repeat the run).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

pub const TOOL: &str = "valley";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> LabResult<Artifact> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(Artifact { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    inputs: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> LabResult<Self> {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new(), inputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> LabResult<PathBuf> {
        let bytes = bytes.as_ref();
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| LabError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> LabResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Record an input file (checkpoint, dataset file) by hash.
    pub fn input(&mut self, path: &Path) -> LabResult<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> LabResult<Manifest> {
        let toml = toml::to_string(config).map_err(|e| LabError::Format(format!("config echo: {e}")))?;
        self.write("config.toml", toml)?;
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            artifacts: self.artifacts,
        };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, s).map_err(|e| LabError::io(&path, e))?;
        Ok(manifest)
    }
}
