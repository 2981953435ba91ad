//! Output directory bookkeeping: every file a command writes is recorded
//! with its SHA-256 so reruns can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError};

pub const MANIFEST_NAME: &str = "artifacts.tsv";

pub struct OutputDir {
    root: PathBuf,
    written: Vec<(String, String, usize)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `rel` (creating parent dirs) and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.retain(|(r, _, _)| r != rel);
        self.written.push((rel.to_string(), sha256_hex(bytes), bytes.len()));
        Ok(path)
    }

    /// Writes the artifact list, sorted by path. The list itself and the
    /// resolved config are not part of it.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.written.sort();
        let mut out = String::from("sha256\tbytes\tpath\n");
        for (rel, hash, n) in &self.written {
            let _ = writeln!(out, "{hash}\t{n}\t{rel}");
        }
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, out).map_err(io_err(&path))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
