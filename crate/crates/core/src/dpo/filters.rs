use std::collections::HashMap;

use crate::abc::{parse_sheet, Sheet};
use crate::metrics::sheet_alignment;
use crate::preprocess::{parse_bar_label, split_header_body};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterFlags {
    pub syntax_error: bool,
    pub staves_ungrouped: bool,
    pub plagiarized: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterReport {
    pub id: String,
    pub flags: FilterFlags,
    pub eligible_chosen: bool,
    pub eligible_rejected: bool,
}

impl FilterReport {
    /// Any flag blocks the chosen set; only plagiarism also blocks the
    /// rejected set.
    pub fn new(id: &str, flags: FilterFlags) -> Self {
        FilterReport {
            id: id.to_string(),
            flags,
            eligible_chosen: !(flags.syntax_error || flags.staves_ungrouped || flags.plagiarized),
            eligible_rejected: !flags.plagiarized,
        }
    }

    pub fn clean(id: &str) -> Self {
        Self::new(id, FilterFlags::default())
    }
}

/// `[r:k/m]` labels must count up by one while the countdown falls by one.
fn labels_consistent(text: &str) -> bool {
    let (_, body) = split_header_body(text);
    let mut prev: Option<(usize, usize)> = None;
    for line in body {
        let Some((k, m, _)) = parse_bar_label(line) else {
            if line.starts_with("[r:") {
                return false;
            }
            continue;
        };
        if k == 0 {
            return false;
        }
        if let Some((pk, pm)) = prev {
            if k != pk + 1 || pm == 0 || m != pm - 1 {
                return false;
            }
        }
        prev = Some((k, m));
    }
    true
}

/// Parses, has no misaligned bars and carries consistent bar labels.
pub fn check_syntax(text: &str) -> bool {
    match parse_sheet(text) {
        Ok(sheet) => sheet_alignment(&sheet).misaligned == 0 && labels_consistent(text),
        Err(_) => false,
    }
}

/// Instrument name with trailing part numbers ("Violin II", "Horn 2")
/// removed.
fn instrument_family(name: &str) -> String {
    let mut words: Vec<&str> = name.split_whitespace().collect();
    while words.len() > 1 {
        let last = words[words.len() - 1];
        let roman = last.chars().all(|c| matches!(c, 'I' | 'V' | 'X'));
        if roman || last.chars().all(|c| c.is_ascii_digit()) {
            words.pop();
        } else {
            break;
        }
    }
    words.join(" ").to_lowercase()
}

/// Voices of one instrument occupy adjacent positions in the header order.
pub fn check_staves_grouped(sheet: &Sheet) -> bool {
    let names: Vec<String> = sheet
        .header
        .voice_declarations
        .iter()
        .filter_map(|v| v.instrument_name.as_deref().map(instrument_family))
        .collect();
    let mut closed: Vec<&str> = Vec::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 && names[i - 1] == *n {
            continue;
        }
        if closed.contains(&n.as_str()) {
            return false;
        }
        closed.push(n);
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlagiarismConfig {
    pub ngram: usize,
    /// Containment strictly above this flags a piece.
    pub threshold: f64,
}

impl Default for PlagiarismConfig {
    fn default() -> Self {
        PlagiarismConfig {
            ngram: 50,
            threshold: 0.8,
        }
    }
}

/// Body text with bar labels and whitespace removed.
pub fn normalized_body(text: &str) -> Vec<u8> {
    let (_, body) = split_header_body(text);
    let mut out = Vec::new();
    for line in body {
        let rest = parse_bar_label(line).map_or(line, |(_, _, r)| r);
        out.extend(rest.bytes().filter(|b| !b.is_ascii_whitespace()));
    }
    out
}

const BASE: u64 = 0x100_0000_01b3;

/// Polynomial hashes of every `n`-byte window.
fn rolling_hashes(text: &[u8], n: usize) -> Vec<u64> {
    if text.len() < n || n == 0 {
        return Vec::new();
    }
    let top = (1..n).fold(1u64, |acc, _| acc.wrapping_mul(BASE));
    let mut h = text[..n].iter().fold(0u64, |acc, &b| acc.wrapping_mul(BASE).wrapping_add(b as u64 + 1));
    let mut out = vec![h];
    for i in n..text.len() {
        h = h.wrapping_sub((text[i - n] as u64 + 1).wrapping_mul(top));
        h = h.wrapping_mul(BASE).wrapping_add(text[i] as u64 + 1);
        out.push(h);
    }
    out
}

/// N-gram index over ground-truth bodies.
#[derive(Clone, Debug, Default)]
pub struct PlagiarismIndex {
    pub config: PlagiarismConfig,
    grams: HashMap<u64, Vec<u32>>,
    short: HashMap<Vec<u8>, u32>,
    pieces: usize,
}

impl PlagiarismIndex {
    pub fn new<S: AsRef<str>>(ground_truth: &[S], config: PlagiarismConfig) -> Self {
        let mut idx = PlagiarismIndex {
            config,
            ..Default::default()
        };
        for (i, t) in ground_truth.iter().enumerate() {
            let body = normalized_body(t.as_ref());
            if body.len() < config.ngram {
                idx.short.entry(body.clone()).or_insert(i as u32);
            }
            let mut hs = rolling_hashes(&body, config.ngram);
            hs.sort_unstable();
            hs.dedup();
            for h in hs {
                idx.grams.entry(h).or_default().push(i as u32);
            }
        }
        idx.pieces = ground_truth.len();
        idx
    }

    pub fn len(&self) -> usize {
        self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces == 0
    }

    /// Highest fraction of the piece's n-grams found in one ground-truth piece.
    pub fn containment(&self, text: &str) -> f64 {
        let body = normalized_body(text);
        let hs = rolling_hashes(&body, self.config.ngram);
        if hs.is_empty() {
            let exact = self.short.contains_key(&body) && !body.is_empty();
            return if exact { 1.0 } else { 0.0 };
        }
        let mut hits: HashMap<u32, usize> = HashMap::new();
        for h in &hs {
            if let Some(owners) = self.grams.get(h) {
                for &o in owners {
                    *hits.entry(o).or_default() += 1;
                }
            }
        }
        let best = hits.values().copied().max().unwrap_or(0);
        best as f64 / hs.len() as f64
    }
}

pub fn check_plagiarism(text: &str, index: &PlagiarismIndex) -> bool {
    index.containment(text) > index.config.threshold
}

/// All three checks for one generated piece.
pub fn filter_piece(id: &str, text: &str, index: &PlagiarismIndex) -> FilterReport {
    let parsed = parse_sheet(text);
    let flags = FilterFlags {
        syntax_error: !check_syntax(text),
        staves_ungrouped: parsed.as_ref().map(|s| !check_staves_grouped(s)).unwrap_or(false),
        plagiarized: check_plagiarism(text, index),
    };
    FilterReport::new(id, flags)
}
