//! Directory layout, checksummed manifests and the output-directory lock.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use pointassim::io::{sha256_hex, write_atomic};
use pointassim::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn world(&self) -> PathBuf {
        self.root.join("world")
    }
    pub fn obs(&self) -> PathBuf {
        self.root.join("obs")
    }
    pub fn ckpt(&self) -> PathBuf {
        self.root.join("ckpt")
    }
    pub fn checkpoint(&self, mode: &str) -> PathBuf {
        self.ckpt().join(format!("model-{mode}.ckpt"))
    }
    pub fn analysis(&self, name: &str) -> PathBuf {
        self.root.join("analysis").join(name)
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }
    pub fn configs(&self) -> PathBuf {
        self.root.join("configs")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the experiment root.
    pub path: String,
    pub sha256: String,
}

/// Record of one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    /// Hash of the configuration sections the outputs depend on.
    pub input_hash: String,
    pub code_version: String,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, input_hash: &str) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            input_hash: input_hash.into(),
            code_version: CODE_VERSION.into(),
            files: Vec::new(),
        }
    }

    /// Writes `bytes` atomically and records their checksum.
    pub fn write(&mut self, root: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.record(root, path, bytes);
        Ok(())
    }

    pub fn record(&mut self, root: &Path, path: &Path, bytes: &[u8]) {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.files.push(FileEntry { path: rel, sha256: sha256_hex(bytes) });
    }

    pub fn sort(&mut self) {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.sort();
        let text = toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Fails on a missing file or a checksum mismatch.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for f in &self.files {
            let p = root.join(&f.path);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(Error::Format(format!("{} does not match its manifest checksum (partial or corrupted write)", p.display())));
            }
        }
        Ok(())
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.files.iter().any(|f| f.path == rel)
    }
}

/// Loads a manifest and refuses it when it was made from other inputs.
pub fn require_manifest(path: &Path, input_hash: &str, what: &str) -> CliResult<Manifest> {
    let m = Manifest::load(path)?;
    if m.input_hash != input_hash {
        return Err(CliError::Stale(format!(
            "{} was produced by a different configuration ({} != {}); rerun {what}",
            path.display(),
            short(&m.input_hash),
            short(input_hash)
        )));
    }
    Ok(m)
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Exclusive use of an experiment directory for the guard's lifetime.
#[derive(Debug)]
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(root.to_path_buf())),
            Err(e) => Err(Error::io(&path, e).into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Appends one line to the experiment's run log.
pub fn log_run(root: &Path, line: &str) -> Result<()> {
    let path = root.join("runs.log");
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}
