//! Run manifests: resolved options, input digests and result summaries as
//! UTF-8 `key=value` lines, written beside every output.

use std::fmt::Display;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, jobs: usize) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("jobs", jobs);
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        self.lines.push((key.into(), value));
    }

    pub fn option(&mut self, key: &str, value: impl Display) {
        self.push(format!("option.{key}"), value);
    }

    pub fn result(&mut self, key: &str, value: impl Display) {
        self.push(format!("result.{key}"), value);
    }

    /// Records the path and digest of an input file.
    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.push(format!("input.{role}.path"), path.display());
        self.push(format!("input.{role}"), format!("sha256:{digest}"));
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.push(format!("output.{role}"), path.display());
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }
}

/// `<out>.manifest` for file outputs, `<out>/manifest.txt` for directories.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.txt")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }
}
