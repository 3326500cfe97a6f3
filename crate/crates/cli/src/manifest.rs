use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run: the exact arguments, the resolved
/// configuration, seeds, and hashes of every input and output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut hasher = Sha256::new();
        for p in entries {
            let bytes = fs::read(&p).map_err(|e| CliError::io(format!("reading {}", p.display()), e))?;
            hasher.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update(Sha256::digest(&bytes));
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Ok(sha256_hex(&bytes))
    }
}

/// An output directory under construction. Every file is written atomically
/// and hashed; the manifest is written last.
pub struct RunDir {
    root: PathBuf,
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    started: Instant,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, args: &[String], config: &impl Serialize) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            args: args.to_vec(),
            config: serde_json::to_value(config).map_err(|e| CliError::Internal(e.to_string()))?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = hash_path(path)?;
        self.inputs.push(Artifact { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        mse_core::io::write_atomic(&self.root.join(name), bytes)?;
        self.outputs.push(Artifact { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(name, text.as_bytes())
    }

    /// Records a directory written by another component (a checkpoint bundle).
    pub fn record_dir(&mut self, name: &str) -> CliResult<()> {
        let sha256 = hash_path(&self.root.join(name))?;
        self.outputs.push(Artifact { path: format!("{name}/"), sha256 });
        Ok(())
    }

    pub fn finish(self) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: self.args,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        mse_core::io::write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
}
