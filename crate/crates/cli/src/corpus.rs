//! Manifest-driven corpus loading shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use scoregen::preprocess::{parse_manifest, strip_prompt, ManifestRecord, Prompt};

use crate::error::{io_err, CliError};

#[derive(Clone, Debug)]
pub struct Piece {
    pub record: ManifestRecord,
    pub source: PathBuf,
    pub text: String,
}

impl Piece {
    /// File stem, used as the piece id.
    pub fn id(&self) -> String {
        self.source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Text without a leading prompt line.
    pub fn body(&self) -> Result<&str, CliError> {
        let (_, rest) = strip_prompt(&self.text).map_err(|e| CliError::Data(format!("{}: {e}", self.source.display())))?;
        Ok(rest)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Records with their paths resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<(ManifestRecord, PathBuf)>, CliError> {
    let text = read_text(path)?;
    let records = parse_manifest(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(records
        .into_iter()
        .map(|r| {
            let p = base.join(&r.path);
            (r, p)
        })
        .collect())
}

pub fn load_pieces(manifest: &Path) -> Result<Vec<Piece>, CliError> {
    let records = load_manifest(manifest)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", manifest.display())));
    }
    records
        .into_iter()
        .map(|(record, source)| {
            let text = read_text(&source)?;
            Ok(Piece { record, source, text })
        })
        .collect()
}

/// Held-out pieces when the manifest has a `test` split, otherwise all.
pub fn test_or_all(pieces: &[Piece]) -> Vec<&Piece> {
    let test: Vec<&Piece> = pieces.iter().filter(|p| p.record.split == "test").collect();
    if test.is_empty() {
        pieces.iter().collect()
    } else {
        test
    }
}

pub fn train_split(pieces: &[Piece]) -> Vec<&Piece> {
    let train: Vec<&Piece> = pieces.iter().filter(|p| p.record.split != "test").collect();
    if train.is_empty() {
        pieces.iter().collect()
    } else {
        train
    }
}

/// Distinct prompts in order of first appearance.
pub fn distinct_prompts(pieces: &[Piece]) -> Vec<Prompt> {
    let mut out: Vec<Prompt> = Vec::new();
    for p in pieces {
        if !out.contains(&p.record.prompt) {
            out.push(p.record.prompt.clone());
        }
    }
    out
}

pub fn manifest_text(records: &[ManifestRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\n", scoregen::preprocess::format_manifest_record(r)))
        .collect()
}
