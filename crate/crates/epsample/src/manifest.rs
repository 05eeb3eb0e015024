//! `run-manifest.json`: what a run read, wrote and was configured with.
//!
//! The manifest digest covers the tool version, subcommand, seed, resolved
//! config and the content digests of inputs and deterministic outputs. Paths,
//! wall-clock times and timing files are recorded but left out, so two runs
//! of the same command over the same data agree even in different
//! directories.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run-manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> io::Result<Self> {
        let data = fs::read(path)?;
        Ok(Self {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path: path.to_path_buf(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Outputs that hold wall-clock measurements; excluded from the digest.
    pub timing_outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub digest: String,
}

#[derive(Serialize)]
struct DigestBody<'a> {
    tool: &'a str,
    version: &'a str,
    subcommand: &'a str,
    seed: Option<u64>,
    config: &'a serde_json::Value,
    inputs: Vec<(&'a str, &'a str)>,
    outputs: Vec<(&'a str, &'a str)>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Collects a run's provenance while it executes.
#[derive(Debug)]
pub struct ManifestBuilder {
    subcommand: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    timing_outputs: Vec<PathBuf>,
    started_unix_ms: u128,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timing_outputs: Vec::new(),
            started_unix_ms: unix_ms(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> io::Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn timing_output(&mut self, path: &Path) {
        self.timing_outputs.push(path.to_path_buf());
    }

    pub fn finish(self) -> RunManifest {
        let tool = env!("CARGO_PKG_NAME");
        let version = env!("CARGO_PKG_VERSION");
        let body = DigestBody {
            tool,
            version,
            subcommand: &self.subcommand,
            seed: self.seed,
            config: &self.config,
            inputs: self
                .inputs
                .iter()
                .map(|f| (f.name.as_str(), f.sha256.as_str()))
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|f| (f.name.as_str(), f.sha256.as_str()))
                .collect(),
        };
        let canonical = serde_json::to_vec(&body).expect("digest body serializes");
        RunManifest {
            tool: tool.into(),
            version: version.into(),
            digest: sha256_hex(&canonical),
            subcommand: self.subcommand,
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            timing_outputs: self.timing_outputs,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: unix_ms(),
        }
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }
}
