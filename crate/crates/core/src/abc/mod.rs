//! The ABC-notation dialect used by the pipeline: header fields, per-voice bars,
//! interleaved `[V:]` lines and `[r:]` bar labels.
//!
//! Bars keep their exact source slice in `raw_text`; the token list always
//! serializes back to it, so rewriting passes (transposition) edit tokens and
//! rebuild the slice.

mod duration;
pub mod key;
mod parse;
mod serialize;
pub mod token;

use thiserror::Error;

pub use duration::Duration;
pub use key::{KeySignature, Mode};
pub use parse::parse_sheet;
pub use serialize::{serialize_header, serialize_sheet};
pub use token::{Multiplier, Note, Pitch, Token};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbcError {
    #[error("missing required header field {0}:")]
    MissingHeaderField(char),
    #[error("malformed header field {field}: {value:?}")]
    BadHeaderField { field: char, value: String },
    #[error("line {line}: unterminated bracket, quote or decoration")]
    UnbalancedBarline { line: usize },
    #[error("line {line}: bad duration {text:?}")]
    BadDuration { line: usize, text: String },
    #[error("line {line}, column {col}: unexpected character {ch:?}")]
    UnexpectedChar { line: usize, col: usize, ch: char },
    #[error("unsupported key {0:?}")]
    UnsupportedKey(String),
    #[error("voice {0:?} declared twice")]
    DuplicateVoice(String),
    #[error("accidental out of range after transposition")]
    AccidentalOverflow,
}

/// Time signature from `M:`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Meter {
    Fraction { numerator: i64, denominator: i64 },
    /// `C`, equivalent to 4/4.
    Common,
    /// `C|`, equivalent to 2/2.
    Cut,
    /// `none`: free meter.
    Free,
}

impl Meter {
    pub fn parse(value: &str) -> Option<Meter> {
        match value.trim() {
            "C" => Some(Meter::Common),
            "C|" => Some(Meter::Cut),
            "none" => Some(Meter::Free),
            v => {
                let (n, d) = v.split_once('/')?;
                let numerator: i64 = n.trim().parse().ok()?;
                let denominator: i64 = d.trim().parse().ok()?;
                (numerator >= 1 && denominator >= 1).then_some(Meter::Fraction {
                    numerator,
                    denominator,
                })
            }
        }
    }

    /// Length of a full bar in whole notes, `None` for free meter.
    pub fn bar_length(&self) -> Option<Duration> {
        match *self {
            Meter::Fraction {
                numerator,
                denominator,
            } => Duration::new(numerator, denominator),
            Meter::Common | Meter::Cut => Some(Duration::from_integer(1)),
            Meter::Free => None,
        }
    }

    /// (numerator, denominator) as written or implied.
    pub fn parts(&self) -> (i64, i64) {
        match *self {
            Meter::Fraction {
                numerator,
                denominator,
            } => (numerator, denominator),
            Meter::Common => (4, 4),
            Meter::Cut => (2, 2),
            Meter::Free => (4, 4),
        }
    }
}

impl std::fmt::Display for Meter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Meter::Fraction {
                numerator,
                denominator,
            } => write!(f, "{numerator}/{denominator}"),
            Meter::Common => f.write_str("C"),
            Meter::Cut => f.write_str("C|"),
            Meter::Free => f.write_str("none"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoiceDecl {
    pub id: String,
    /// Everything after the id on the declaring line, verbatim.
    pub properties: String,
    pub instrument_name: Option<String>,
    /// Index of the `%%score` group this voice belongs to.
    pub stave_group: Option<usize>,
    /// Declared by a `V:` line before `K:` (as opposed to first appearing in the body).
    pub in_header: bool,
}

impl VoiceDecl {
    pub fn new(id: &str, properties: &str, in_header: bool) -> Self {
        VoiceDecl {
            id: id.to_string(),
            properties: properties.to_string(),
            instrument_name: instrument_name(properties),
            stave_group: None,
            in_header,
        }
    }
}

fn instrument_name(props: &str) -> Option<String> {
    for key in ["name=", "nm="] {
        let mut search = props;
        while let Some(i) = search.find(key) {
            let boundary = i == 0 || search[..i].ends_with(char::is_whitespace);
            let rest = &search[i + key.len()..];
            if boundary {
                if let Some(stripped) = rest.strip_prefix('"') {
                    let end = stripped.find('"').unwrap_or(stripped.len());
                    return Some(stripped[..end].to_string());
                }
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                return Some(rest[..end].to_string());
            }
            search = rest;
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TuneHeader {
    pub reference_number: u32,
    /// `L:` as written; see [`TuneHeader::unit_length`] for the effective value.
    pub unit_note_length: Option<Duration>,
    pub meter: Option<Meter>,
    pub key: KeySignature,
    pub tempo: Option<String>,
    pub voice_declarations: Vec<VoiceDecl>,
    pub score_directive: Option<String>,
    pub extra_fields: Vec<(char, String)>,
    /// `%%` directive lines other than `%%score`, without the leading `%%`.
    pub directives: Vec<String>,
}

impl TuneHeader {
    pub fn new(reference_number: u32, key: KeySignature) -> Self {
        TuneHeader {
            reference_number,
            unit_note_length: None,
            meter: None,
            key,
            tempo: None,
            voice_declarations: Vec::new(),
            score_directive: None,
            extra_fields: Vec::new(),
            directives: Vec::new(),
        }
    }

    /// Effective unit note length: `L:` if present, else 1/16 when the meter is
    /// below 3/4 and 1/8 otherwise (free or absent meter gives 1/8).
    pub fn unit_length(&self) -> Duration {
        if let Some(l) = self.unit_note_length {
            return l;
        }
        match self.meter.and_then(|m| m.bar_length()) {
            Some(len) if len < Duration::new(3, 4).unwrap() => Duration::new(1, 16).unwrap(),
            _ => Duration::new(1, 8).unwrap(),
        }
    }

    /// Prevailing bar length, `None` for free or absent meter.
    pub fn bar_length(&self) -> Option<Duration> {
        self.meter.and_then(|m| m.bar_length())
    }

    pub fn voice(&self, id: &str) -> Option<&VoiceDecl> {
        self.voice_declarations.iter().find(|v| v.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bar {
    pub voice_id: String,
    pub tokens: Vec<Token>,
    pub raw_text: String,
    /// Bar is the last one on its source line (per-voice layout only).
    pub ends_line: bool,
    /// `[r:...]` label written at the start of this bar's line.
    pub line_label: Option<String>,
}

impl Bar {
    pub fn from_tokens(voice_id: &str, tokens: Vec<Token>) -> Self {
        let raw_text = token::tokens_to_string(&tokens);
        Bar {
            voice_id: voice_id.to_string(),
            tokens,
            raw_text,
            ends_line: false,
            line_label: None,
        }
    }

    /// Lexes `text` as a single bar fragment.
    pub fn parse(voice_id: &str, text: &str) -> Result<Self, AbcError> {
        Ok(Bar::from_tokens(voice_id, token::lex_line(text, 1)?))
    }

    pub fn rebuild_raw(&mut self) {
        self.raw_text = token::tokens_to_string(&self.tokens);
    }

    /// True when the bar contains no sounding note, chord or grace group.
    pub fn is_rest_only(&self) -> bool {
        !self.tokens.iter().any(Token::is_sounding)
    }

    pub fn has_events(&self) -> bool {
        self.tokens.iter().any(Token::is_event)
    }

    /// Meter changes written inside the bar.
    pub fn meter_change(&self) -> Option<Meter> {
        self.tokens.iter().rev().find_map(|t| match t {
            Token::InlineField { field: 'M', value } => Meter::parse(value),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Each voice written as its own block of lines under a `V:` line.
    PerVoice,
    /// One line per bar index, voices separated by inline `[V:]` indicators.
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoiceBody {
    pub id: String,
    pub bars: Vec<Bar>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sheet {
    pub header: TuneHeader,
    /// One entry per declared voice, in header order.
    pub voices: Vec<VoiceBody>,
    pub layout: Layout,
    /// `w:` lyric lines as (voice id, text).
    pub lyrics: Vec<(String, String)>,
}

impl Sheet {
    pub fn voice(&self, id: &str) -> Option<&VoiceBody> {
        self.voices.iter().find(|v| v.id == id)
    }

    pub fn bar_count(&self) -> usize {
        self.voices.iter().map(|v| v.bars.len()).max().unwrap_or(0)
    }

    /// Fragments of every voice at bar index `k` (voices lacking that bar are skipped).
    pub fn measure(&self, k: usize) -> Vec<&Bar> {
        self.voices.iter().filter_map(|v| v.bars.get(k)).collect()
    }
}

/// Length of a bar in whole notes under unit note length `unit`.
pub fn bar_duration(bar: &Bar, unit: Duration) -> Duration {
    token::tokens_length(&bar.tokens) * unit
}

/// True iff every fragment holds only rests (`z`/`x`) and no sounding note.
pub fn is_rest_bar(measure: &[&Bar]) -> bool {
    measure.iter().all(|b| b.is_rest_only())
}
