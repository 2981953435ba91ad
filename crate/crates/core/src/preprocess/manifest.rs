use std::collections::HashMap;

use super::{PreprocessError, Prompt};

/// One corpus entry: a file and its labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub prompt: Prompt,
    pub split: String,
}

/// Reads a manifest: one record per line, tab-separated `key=value` pairs with
/// keys `path`, `period`, `composer`, `instrumentation` (optional) and `split`
/// (defaults to `train`). Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, PreprocessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = HashMap::new();
        for part in line.split('\t') {
            let (k, v) = part.split_once('=').ok_or_else(|| PreprocessError::Manifest {
                line: line_no,
                reason: format!("expected key=value, got {part:?}"),
            })?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields.get(k).copied().ok_or_else(|| PreprocessError::Manifest {
                line: line_no,
                reason: format!("missing {k}"),
            })
        };
        let mut prompt_text = format!("{}|{}", get("period")?, get("composer")?);
        if let Some(i) = fields.get("instrumentation") {
            prompt_text.push('|');
            prompt_text.push_str(i);
        }
        let prompt: Prompt = prompt_text.parse().map_err(|e: PreprocessError| {
            PreprocessError::Manifest {
                line: line_no,
                reason: e.to_string(),
            }
        })?;
        out.push(ManifestRecord {
            path: get("path")?.to_string(),
            prompt,
            split: fields.get("split").copied().unwrap_or("train").to_string(),
        });
    }
    Ok(out)
}

pub fn format_manifest_record(r: &ManifestRecord) -> String {
    let mut s = format!(
        "path={}\tperiod={}\tcomposer={}",
        r.path, r.prompt.period, r.prompt.composer
    );
    if let Some(i) = r.prompt.instrumentation {
        s.push_str(&format!("\tinstrumentation={i}"));
    }
    s.push_str(&format!("\tsplit={}", r.split));
    s
}
