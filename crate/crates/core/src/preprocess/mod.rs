//! Turns parsed sheets into training text: voices interleaved bar by bar,
//! all-rest bars removed, `[r:k/m]` bar labels, key augmentation, prompt line
//! and line-aligned segments for long pieces.

mod clean;
mod manifest;
mod prompt;
mod segment;
mod transpose;

use num_rational::Ratio;
use thiserror::Error;

use crate::abc::{
    bar_duration, is_rest_bar, serialize_header, AbcError, Bar, Duration, Sheet, TuneHeader,
};

pub use clean::{clean_text_annotations, TextWhitelist};
pub use manifest::{format_manifest_record, parse_manifest, ManifestRecord};
pub use prompt::{prepend_prompt, strip_prompt, Instrumentation, Period, Prompt};
pub use segment::{make_line_segment, make_segment, make_training_segment, split_header_body, TrainingSegment};
pub use transpose::{
    choose_key, finetune_key_distribution, transpose, transpose_bar, transpose_sheet, KeyChoice,
    Stage,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error(transparent)]
    Abc(#[from] AbcError),
    #[error("voice {voice} has {found} bars, expected {expected}")]
    VoiceLengthMismatch {
        voice: String,
        found: usize,
        expected: usize,
    },
    #[error("segment budget {budget} cannot hold the header plus one body line ({needed})")]
    SegmentTooSmall { budget: usize, needed: usize },
    #[error("bad prompt: {0}")]
    BadPrompt(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// A sheet whose voices are merged bar by bar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterleavedSheet {
    /// Header with every voice declared before `K:`.
    pub header: TuneHeader,
    /// Measure k holds the k-th bar of every voice, in header voice order.
    pub measures: Vec<Vec<Bar>>,
    /// Body characters kept by [`strip_rest_bars`] over the characters before it.
    pub length_ratio_after_strip: Ratio<i64>,
}

impl InterleavedSheet {
    pub fn measure_line(measure: &[Bar]) -> String {
        measure
            .iter()
            .map(|b| format!("[V:{}]{}", b.voice_id, b.raw_text.trim_end()))
            .collect()
    }

    /// Unannotated body lines, one per measure, without newlines.
    pub fn body_lines(&self) -> Vec<String> {
        self.measures.iter().map(|m| Self::measure_line(m)).collect()
    }

    pub fn header_text(&self) -> String {
        serialize_header(&self.header)
    }

    /// Header followed by unannotated body lines.
    pub fn to_text(&self) -> String {
        let mut out = self.header_text();
        for l in self.body_lines() {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    /// Header followed by `[r:]`-annotated body lines.
    pub fn to_annotated_text(&self) -> String {
        let mut out = self.header_text();
        for l in annotate_bar_indices(self) {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    fn body_chars(&self) -> i64 {
        self.body_lines().iter().map(|l| l.len() as i64 + 1).sum()
    }
}

fn full_rest_bar(voice_id: &str, header: &TuneHeader) -> Bar {
    let bar_len = header.bar_length().unwrap_or(Duration::from_integer(1));
    let units = bar_len.ratio() / header.unit_length().ratio();
    let text = if units.is_integer() {
        if *units.numer() == 1 {
            "x|".to_string()
        } else {
            format!("x{}|", units.numer())
        }
    } else {
        format!("x{}/{}|", units.numer(), units.denom())
    };
    Bar::parse(voice_id, &text).expect("padding bar lexes")
}

/// Merges voices bar by bar. With `pad`, shorter voices are first extended with
/// invisible full-rest bars; without it, unequal bar counts are an error.
pub fn interleave(sheet: &Sheet, pad: bool) -> Result<InterleavedSheet, PreprocessError> {
    let mut header = sheet.header.clone();
    for v in &mut header.voice_declarations {
        v.in_header = true;
    }
    let n = sheet.bar_count();
    let mut voices: Vec<Vec<Bar>> = Vec::with_capacity(sheet.voices.len());
    for v in &sheet.voices {
        if v.bars.len() != n && !pad {
            return Err(PreprocessError::VoiceLengthMismatch {
                voice: v.id.clone(),
                found: v.bars.len(),
                expected: n,
            });
        }
        let mut bars: Vec<Bar> = v
            .bars
            .iter()
            .map(|b| Bar {
                ends_line: false,
                line_label: None,
                ..b.clone()
            })
            .collect();
        while bars.len() < n {
            bars.push(full_rest_bar(&v.id, &sheet.header));
        }
        voices.push(bars);
    }
    let measures = (0..n)
        .map(|k| voices.iter().map(|bars| bars[k].clone()).collect())
        .collect();
    Ok(InterleavedSheet {
        header,
        measures,
        length_ratio_after_strip: Ratio::from_integer(1),
    })
}

/// Drops every measure in which all voices rest.
pub fn strip_rest_bars(isheet: &InterleavedSheet) -> InterleavedSheet {
    let original = isheet.body_chars();
    let measures: Vec<Vec<Bar>> = isheet
        .measures
        .iter()
        .filter(|m| {
            let refs: Vec<&Bar> = m.iter().collect();
            !is_rest_bar(&refs)
        })
        .cloned()
        .collect();
    let mut out = InterleavedSheet {
        header: isheet.header.clone(),
        measures,
        length_ratio_after_strip: Ratio::from_integer(1),
    };
    if original > 0 {
        out.length_ratio_after_strip = Ratio::new(out.body_chars(), original);
    }
    out
}

pub fn bar_label(k: usize, n: usize) -> String {
    format!("[r:{}/{}]", k, n - k)
}

/// Body lines prefixed `[r:k/m]`: 1-based index k of n, m = n - k bars remaining.
pub fn annotate_bar_indices(isheet: &InterleavedSheet) -> Vec<String> {
    let lines = isheet.body_lines();
    let n = lines.len();
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| format!("{}{}", bar_label(i + 1, n), l))
        .collect()
}

/// Parses a leading `[r:k/m]` label.
pub fn parse_bar_label(line: &str) -> Option<(usize, usize, &str)> {
    let rest = line.strip_prefix("[r:")?;
    let end = rest.find(']')?;
    let (k, m) = rest[..end].split_once('/')?;
    Some((k.parse().ok()?, m.parse().ok()?, &rest[end + 1..]))
}

pub fn strip_annotations(lines: &[String]) -> Vec<String> {
    lines
        .iter()
        .map(|l| match parse_bar_label(l) {
            Some((_, _, rest)) => rest.to_string(),
            None => l.clone(),
        })
        .collect()
}

/// Per-measure fragment durations in whole notes.
pub fn measure_durations(isheet: &InterleavedSheet) -> Vec<Vec<Duration>> {
    let unit = isheet.header.unit_length();
    isheet
        .measures
        .iter()
        .map(|m| m.iter().map(|b| bar_duration(b, unit)).collect())
        .collect()
}

/// Full preprocessing of one sheet: interleave with padding, strip rest bars.
pub fn preprocess_sheet(sheet: &Sheet) -> Result<InterleavedSheet, PreprocessError> {
    Ok(strip_rest_bars(&interleave(sheet, true)?))
}
