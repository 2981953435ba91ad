//! Bar-stream patching: header lines and bars cut into fixed-length byte patches.

use thiserror::Error;

pub const PAD: u16 = 256;
pub const BOS: u16 = 257;
pub const EOS: u16 = 258;
/// 256 byte values plus the three special codes.
pub const VOCAB_SIZE: usize = 259;
pub const DEFAULT_PATCH_SIZE: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("malformed patch {index}: {reason}")]
    MalformedPatch { index: usize, reason: String },
    #[error("code {code} out of range for vocabulary of {vocab}")]
    CodeOutOfRange { code: u16, vocab: usize },
    #[error("patch size {0} is below the minimum of 4")]
    PatchSizeTooSmall(usize),
    #[error("token dump line {line}: {reason}")]
    BadDump { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchKind {
    Header,
    Bar,
    Special,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub chars: Vec<u16>,
    pub kind: PatchKind,
}

impl Patch {
    pub fn special(code: u16, size: usize) -> Self {
        let mut chars = vec![PAD; size];
        chars[0] = code;
        Patch {
            chars,
            kind: PatchKind::Special,
        }
    }

    pub fn is_bos(&self) -> bool {
        self.chars.first() == Some(&BOS)
    }

    pub fn is_eos(&self) -> bool {
        self.chars.first() == Some(&EOS)
    }

    /// Bytes before the PAD run.
    pub fn content(&self) -> impl Iterator<Item = u8> + '_ {
        self.chars.iter().take_while(|&&c| c < 256).map(|&c| c as u8)
    }
}

/// Where a patch's content starts in the segmented source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub unit: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSequence {
    pub patches: Vec<Patch>,
    /// `None` for BOS and EOS.
    pub source_spans: Vec<Option<SourceSpan>>,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

fn is_field_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}

/// Splits one music line into bars. A bar closes after its barline run;
/// trailing whitespace and the newline stay with the last bar.
fn split_bars(line: &str, out: &mut Vec<String>) {
    let bytes = line.as_bytes();
    let mut start = 0;
    let mut i = 0;
    let mut in_quote = false;
    let mut has_content = false;
    let first = out.len();
    while i < bytes.len() {
        let c = bytes[i];
        if in_quote {
            in_quote = c != b'"';
            i += 1;
            continue;
        }
        match c {
            b'"' => {
                in_quote = true;
                has_content = true;
                i += 1;
            }
            b'|' => {
                // Swallow the whole barline, e.g. `||`, `|]`, `:|`, `|:`.
                while i < bytes.len() && matches!(bytes[i], b'|' | b']' | b':') {
                    i += 1;
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if has_content {
                    out.push(line[start..i].to_string());
                    start = i;
                    has_content = false;
                }
            }
            b'\n' | b'\r' | b' ' | b'\t' => i += 1,
            _ => {
                has_content = true;
                i += 1;
            }
        }
    }
    if start < bytes.len() {
        if has_content || out.len() == first {
            out.push(line[start..].to_string());
        } else {
            out.last_mut().unwrap().push_str(&line[start..]);
        }
    }
}

/// Cuts text into patch units: every header or prompt line is one unit, every
/// bar of a music line is one unit.
pub fn segment_units(text: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut in_body = false;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if !in_body {
            units.push(line.to_string());
            if content.starts_with("K:") {
                in_body = true;
            }
            continue;
        }
        if content.starts_with('%') || is_field_line(content) || !content.contains('|') {
            units.push(line.to_string());
        } else {
            split_bars(line, &mut units);
        }
    }
    units
}

fn check_patch_size(size: usize) -> Result<(), PatchError> {
    if size < 4 {
        Err(PatchError::PatchSizeTooSmall(size))
    } else {
        Ok(())
    }
}

/// Packs units into patches of `size` codes, each unit starting a new patch.
pub fn to_patches(units: &[String], size: usize) -> Result<PatchSequence, PatchError> {
    check_patch_size(size)?;
    let mut patches = vec![Patch::special(BOS, size)];
    let mut spans = vec![None];
    let mut in_body = false;
    for (u, unit) in units.iter().enumerate() {
        let kind = if in_body { PatchKind::Bar } else { PatchKind::Header };
        if unit.starts_with("K:") {
            in_body = true;
        }
        for (n, chunk) in unit.as_bytes().chunks(size).enumerate() {
            let mut chars: Vec<u16> = chunk.iter().map(|&b| b as u16).collect();
            chars.resize(size, PAD);
            patches.push(Patch { chars, kind });
            spans.push(Some(SourceSpan {
                unit: u,
                offset: n * size,
            }));
        }
    }
    patches.push(Patch::special(EOS, size));
    spans.push(None);
    Ok(PatchSequence {
        patches,
        source_spans: spans,
    })
}

pub fn tokenize(text: &str, size: usize) -> Result<PatchSequence, PatchError> {
    to_patches(&segment_units(text), size)
}

/// Checks one patch's shape: content bytes, then a PAD run; special codes only
/// as the first code of an otherwise empty patch.
pub fn validate_patch(index: usize, p: &Patch) -> Result<(), PatchError> {
    let bad = |reason: &str| PatchError::MalformedPatch {
        index,
        reason: reason.to_string(),
    };
    if p.chars.is_empty() {
        return Err(bad("empty patch"));
    }
    if p.chars.iter().any(|&c| c as usize >= VOCAB_SIZE) {
        return Err(bad("code outside vocabulary"));
    }
    let first = p.chars[0];
    if first == BOS || first == EOS {
        if p.chars[1..].iter().any(|&c| c != PAD) {
            return Err(bad("special patch with content"));
        }
        return Ok(());
    }
    let mut seen_pad = false;
    for &c in &p.chars {
        match c {
            PAD => seen_pad = true,
            BOS | EOS => return Err(bad("special code inside patch")),
            _ if seen_pad => return Err(bad("PAD before content")),
            _ => {}
        }
    }
    if first == PAD {
        return Err(bad("patch with no content"));
    }
    Ok(())
}

pub fn detokenize_bytes(ps: &PatchSequence) -> Result<Vec<u8>, PatchError> {
    let mut out = Vec::new();
    for (i, p) in ps.patches.iter().enumerate() {
        validate_patch(i, p)?;
        out.extend(p.content());
    }
    Ok(out)
}

/// Concatenates patch contents. Invalid UTF-8 (only possible from sampled
/// patches) is replaced rather than rejected.
pub fn detokenize(ps: &PatchSequence) -> Result<String, PatchError> {
    let bytes = detokenize_bytes(ps)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}

/// Flattened one-hot encoding: block i holds the one-hot of code i.
pub fn patch_one_hot(p: &Patch, vocab: usize) -> Result<Vec<f64>, PatchError> {
    let mut v = vec![0.0; p.chars.len() * vocab];
    for (i, &c) in p.chars.iter().enumerate() {
        if c as usize >= vocab {
            return Err(PatchError::CodeOutOfRange { code: c, vocab });
        }
        v[i * vocab + c as usize] = 1.0;
    }
    Ok(v)
}

/// One patch per line, codes separated by spaces.
pub fn write_token_dump(ps: &PatchSequence) -> String {
    let mut out = String::new();
    for p in &ps.patches {
        let line: Vec<String> = p.chars.iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a token dump. Content patches come back as [`PatchKind::Bar`] since
/// the dump does not record kinds; spans are not recoverable either.
pub fn read_token_dump(text: &str) -> Result<PatchSequence, PatchError> {
    let mut patches = Vec::new();
    let mut size = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let chars = line
            .split_whitespace()
            .map(|t| t.parse::<u16>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PatchError::BadDump {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if *size.get_or_insert(chars.len()) != chars.len() {
            return Err(PatchError::BadDump {
                line: i + 1,
                reason: format!("expected {} codes, found {}", size.unwrap(), chars.len()),
            });
        }
        let kind = if chars[0] == BOS || chars[0] == EOS {
            PatchKind::Special
        } else {
            PatchKind::Bar
        };
        let p = Patch { chars, kind };
        validate_patch(patches.len(), &p)?;
        patches.push(p);
    }
    let source_spans = vec![None; patches.len()];
    Ok(PatchSequence {
        patches,
        source_spans,
    })
}
