//! Result files and the provenance manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

/// Writes result files into the output directory and remembers their hashes.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: Instant,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        log::info!("wrote {}", path.display());
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::pipeline("output", e))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// One header line, then one record per row.
    pub fn write_csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::pipeline("output", e);
        w.write_record(header).map_err(fail)?;
        for r in rows {
            w.serialize(r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::pipeline("output", e))?;
        self.write(name, &bytes)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the manifest last so it covers every other file.
    pub fn finish(mut self, cfg: &RunConfig) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            tool: "critdet",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: cfg.subcommand.map(|s| s.as_str().to_string()).unwrap_or_default(),
            config_sha256: cfg.content_hash(),
            master_seed: cfg.master_seed,
            workers: cfg.workers,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::pipeline("output", e))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        self.files.clear();
        Ok(manifest)
    }
}
