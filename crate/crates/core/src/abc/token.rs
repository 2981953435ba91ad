//! Lexical tokens of a tune-body line.

use std::fmt;

use num_rational::Ratio;

use super::key::{letter_index, natural_semitone, LETTERS};
use super::{AbcError, Duration};

/// A length multiplier such as `2`, `/2`, `3/2` or `/` together with its source spelling.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Multiplier {
    pub text: String,
    pub value: Duration,
}

impl Multiplier {
    pub fn one() -> Self {
        Multiplier {
            text: String::new(),
            value: Duration::from_integer(1),
        }
    }

    pub fn from_units(units: i64) -> Self {
        Multiplier {
            text: if units == 1 { String::new() } else { units.to_string() },
            value: Duration::from_integer(units),
        }
    }
}

/// A written pitch: optional explicit accidental (`Some(0)` is a natural sign),
/// upper-case letter and octave number where `C` is octave 4 and `c` octave 5.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pitch {
    pub accidental: Option<i32>,
    pub letter: char,
    pub octave: i32,
}

impl Pitch {
    /// Diatonic step count from C0.
    pub fn diatonic(&self) -> i32 {
        self.octave * 7 + letter_index(self.letter) as i32
    }

    pub fn from_diatonic(step: i32, accidental: Option<i32>) -> Self {
        Pitch {
            accidental,
            letter: LETTERS[step.rem_euclid(7) as usize],
            octave: step.div_euclid(7),
        }
    }

    /// MIDI note number given the alteration in force for this letter.
    pub fn midi(&self, alteration: i32) -> i32 {
        12 * (self.octave + 1) + natural_semitone(letter_index(self.letter)) + alteration
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.accidental {
            Some(2) => f.write_str("^^")?,
            Some(1) => f.write_str("^")?,
            Some(0) => f.write_str("=")?,
            Some(-1) => f.write_str("_")?,
            Some(-2) => f.write_str("__")?,
            _ => {}
        }
        if self.octave >= 5 {
            write!(f, "{}", self.letter.to_ascii_lowercase())?;
            for _ in 5..self.octave {
                f.write_str("'")?;
            }
        } else {
            write!(f, "{}", self.letter)?;
            for _ in self.octave..4 {
                f.write_str(",")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Note {
    pub pitch: Pitch,
    pub multiplier: Multiplier,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Note(Note),
    /// `z` or `x`.
    Rest { kind: char, multiplier: Multiplier },
    /// `[...]` with the bracket contents kept as tokens.
    Chord { inner: Vec<Token>, multiplier: Multiplier },
    /// `{...}` grace group; `slash` marks an acciaccatura `{/...}`.
    Grace { slash: bool, inner: Vec<Token> },
    /// `!trill!`, `+f+` or a one-character shorthand like `.` or `~`.
    Decoration(String),
    /// Quoted text including the quotes.
    Annotation(String),
    InlineField { field: char, value: String },
    Tie,
    SlurOpen,
    SlurClose,
    Tuplet { text: String, p: u32, q: u32, r: u32 },
    /// Run of `>` or `<`.
    Broken(String),
    Barline(String),
    Ending(String),
    Space(String),
}

impl Token {
    pub fn is_event(&self) -> bool {
        matches!(self, Token::Note(_) | Token::Rest { .. } | Token::Chord { .. })
    }

    pub fn is_sounding(&self) -> bool {
        matches!(self, Token::Note(_) | Token::Chord { .. } | Token::Grace { .. })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Note(n) => write!(f, "{}{}", n.pitch, n.multiplier.text),
            Token::Rest { kind, multiplier } => write!(f, "{kind}{}", multiplier.text),
            Token::Chord { inner, multiplier } => {
                f.write_str("[")?;
                for t in inner {
                    write!(f, "{t}")?;
                }
                write!(f, "]{}", multiplier.text)
            }
            Token::Grace { slash, inner } => {
                f.write_str(if *slash { "{/" } else { "{" })?;
                for t in inner {
                    write!(f, "{t}")?;
                }
                f.write_str("}")
            }
            Token::Decoration(s)
            | Token::Annotation(s)
            | Token::Broken(s)
            | Token::Barline(s)
            | Token::Ending(s)
            | Token::Space(s) => f.write_str(s),
            Token::InlineField { field, value } => write!(f, "[{field}:{value}]"),
            Token::Tie => f.write_str("-"),
            Token::SlurOpen => f.write_str("("),
            Token::SlurClose => f.write_str(")"),
            Token::Tuplet { text, .. } => f.write_str(text),
        }
    }
}

pub fn tokens_to_string(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect()
}

const DECORATION_SHORTHANDS: &[char] = &['.', '~', 'H', 'L', 'M', 'O', 'P', 'S', 'T', 'u', 'v', 'y'];

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

/// Splits one body line into tokens. `line` is the 1-based source line used in errors.
pub fn lex_line(src: &str, line: usize) -> Result<Vec<Token>, AbcError> {
    let mut lx = Lexer { src, pos: 0, line };
    let mut out = Vec::new();
    while lx.pos < src.len() {
        lx.next_token(&mut out, false)?;
    }
    Ok(out)
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn bump(&mut self) -> char {
        let c = self.peek().expect("bump past end");
        self.pos += c.len_utf8();
        c
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn unexpected(&self, ch: char) -> AbcError {
        AbcError::UnexpectedChar {
            line: self.line,
            col: self.src[..self.pos].chars().count() + 1,
            ch,
        }
    }

    fn delimited(&mut self, close: char) -> Result<String, AbcError> {
        let start = self.pos;
        self.bump();
        match self.src[self.pos..].find(close) {
            Some(off) => {
                self.pos += off + close.len_utf8();
                Ok(self.src[start..self.pos].to_string())
            }
            None => Err(AbcError::UnbalancedBarline { line: self.line }),
        }
    }

    fn multiplier(&mut self) -> Result<Multiplier, AbcError> {
        let start = self.pos;
        let num = self.take_while(|c| c.is_ascii_digit());
        let mut value = if num.is_empty() {
            Ratio::from_integer(1i64)
        } else {
            Ratio::from_integer(num.parse::<i64>().map_err(|_| self.bad_duration(start))?)
        };
        while self.peek() == Some('/') {
            self.bump();
            let d = self.take_while(|c| c.is_ascii_digit());
            let d = if d.is_empty() {
                2
            } else {
                d.parse::<i64>().map_err(|_| self.bad_duration(start))?
            };
            if d == 0 {
                return Err(self.bad_duration(start));
            }
            value /= d;
        }
        if *value.numer() <= 0 {
            return Err(self.bad_duration(start));
        }
        Ok(Multiplier {
            text: self.src[start..self.pos].to_string(),
            value: Duration::from_ratio(value),
        })
    }

    fn bad_duration(&self, start: usize) -> AbcError {
        AbcError::BadDuration {
            line: self.line,
            text: self.src[start..self.pos.max(start + 1).min(self.src.len())].to_string(),
        }
    }

    fn pitch(&mut self) -> Result<Pitch, AbcError> {
        let mut accidental = None;
        match self.peek() {
            Some('^') => {
                self.bump();
                accidental = Some(1);
                if self.peek() == Some('^') {
                    self.bump();
                    accidental = Some(2);
                }
            }
            Some('_') => {
                self.bump();
                accidental = Some(-1);
                if self.peek() == Some('_') {
                    self.bump();
                    accidental = Some(-2);
                }
            }
            Some('=') => {
                self.bump();
                accidental = Some(0);
            }
            _ => {}
        }
        let c = match self.peek() {
            Some(c) if matches!(c, 'A'..='G' | 'a'..='g') => self.bump(),
            Some(c) => return Err(self.unexpected(c)),
            None => return Err(AbcError::UnbalancedBarline { line: self.line }),
        };
        let mut octave = if c.is_ascii_lowercase() { 5 } else { 4 };
        while let Some(m) = self.peek() {
            match m {
                '\'' => octave += 1,
                ',' => octave -= 1,
                _ => break,
            }
            self.bump();
        }
        Ok(Pitch {
            accidental,
            letter: c.to_ascii_uppercase(),
            octave,
        })
    }

    fn inner_group(&mut self, close: char) -> Result<Vec<Token>, AbcError> {
        let mut inner = Vec::new();
        loop {
            match self.peek() {
                None | Some('|') => return Err(AbcError::UnbalancedBarline { line: self.line }),
                Some(c) if c == close => {
                    self.bump();
                    return Ok(inner);
                }
                Some(_) => self.next_token(&mut inner, true)?,
            }
        }
    }

    fn barline(&mut self) -> Result<String, AbcError> {
        let start = self.pos;
        self.take_while(|c| c == ':');
        let colons = self.pos - start;
        match self.peek() {
            Some('|') => {
                self.take_while(|c| c == '|');
                if self.peek() == Some(']') {
                    self.bump();
                }
            }
            Some('[') if self.peek_at(1) == Some('|') => {
                self.bump();
                self.bump();
            }
            _ if colons >= 2 => {}
            Some(c) => return Err(self.unexpected(c)),
            None => return Err(self.unexpected(':')),
        }
        self.take_while(|c| c == ':');
        Ok(self.src[start..self.pos].to_string())
    }

    fn next_token(&mut self, out: &mut Vec<Token>, nested: bool) -> Result<(), AbcError> {
        let c = self.peek().expect("token start");
        match c {
            ' ' | '\t' | '`' | '\\' => {
                let s = self.take_while(|c| matches!(c, ' ' | '\t' | '`' | '\\'));
                out.push(Token::Space(s.to_string()));
            }
            '"' => out.push(Token::Annotation(self.delimited('"')?)),
            '!' => out.push(Token::Decoration(self.delimited('!')?)),
            '+' => out.push(Token::Decoration(self.delimited('+')?)),
            c if DECORATION_SHORTHANDS.contains(&c) => {
                self.bump();
                out.push(Token::Decoration(c.to_string()));
            }
            '{' if !nested => {
                self.bump();
                let slash = self.peek() == Some('/');
                if slash {
                    self.bump();
                }
                let inner = self.inner_group('}')?;
                out.push(Token::Grace { slash, inner });
            }
            '[' if !nested => {
                let next = self.peek_at(1);
                let after = self.peek_at(2);
                match (next, after) {
                    (Some(f), Some(':')) if f.is_ascii_alphabetic() => {
                        let start = self.pos;
                        match self.src[self.pos..].find(']') {
                            Some(off) => self.pos += off + 1,
                            None => return Err(AbcError::UnbalancedBarline { line: self.line }),
                        }
                        let body = &self.src[start + 3..self.pos - 1];
                        out.push(Token::InlineField {
                            field: f,
                            value: body.to_string(),
                        });
                    }
                    (Some('|'), _) => out.push(Token::Barline(self.barline()?)),
                    (Some(d), _) if d.is_ascii_digit() => {
                        let start = self.pos;
                        self.bump();
                        self.take_while(|c| c.is_ascii_digit() || c == ',' || c == '-');
                        out.push(Token::Ending(self.src[start..self.pos].to_string()));
                    }
                    _ => {
                        self.bump();
                        let inner = self.inner_group(']')?;
                        let multiplier = self.multiplier()?;
                        out.push(Token::Chord { inner, multiplier });
                    }
                }
            }
            '|' | ':' if !nested => {
                out.push(Token::Barline(self.barline()?));
                let digits = self.take_while(|c| c.is_ascii_digit());
                if !digits.is_empty() {
                    let start = self.pos - digits.len();
                    self.take_while(|c| c.is_ascii_digit() || c == ',' || c == '-');
                    out.push(Token::Ending(self.src[start..self.pos].to_string()));
                }
            }
            '(' => {
                if self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
                    out.push(self.tuplet()?);
                } else {
                    self.bump();
                    out.push(Token::SlurOpen);
                }
            }
            ')' => {
                self.bump();
                out.push(Token::SlurClose);
            }
            '-' => {
                self.bump();
                out.push(Token::Tie);
            }
            '>' | '<' => {
                let s = self.take_while(|x| x == c);
                out.push(Token::Broken(s.to_string()));
            }
            '^' | '_' | '=' | 'A'..='G' | 'a'..='g' => {
                let pitch = self.pitch()?;
                let multiplier = self.multiplier()?;
                out.push(Token::Note(Note { pitch, multiplier }));
            }
            'z' | 'x' => {
                self.bump();
                let multiplier = self.multiplier()?;
                out.push(Token::Rest { kind: c, multiplier });
            }
            '0'..='9' | '/' => {
                let start = self.pos;
                self.take_while(|c| c.is_ascii_digit() || c == '/');
                return Err(AbcError::BadDuration {
                    line: self.line,
                    text: self.src[start..self.pos].to_string(),
                });
            }
            other => return Err(self.unexpected(other)),
        }
        Ok(())
    }

    fn tuplet(&mut self) -> Result<Token, AbcError> {
        let start = self.pos;
        self.bump();
        let p: u32 = self.take_while(|c| c.is_ascii_digit()).parse().unwrap_or(0);
        let mut q = None;
        let mut r = None;
        if self.peek() == Some(':') {
            self.bump();
            let s = self.take_while(|c| c.is_ascii_digit());
            q = s.parse().ok();
            if self.peek() == Some(':') {
                self.bump();
                let s = self.take_while(|c| c.is_ascii_digit());
                r = s.parse().ok();
            }
        }
        if p < 2 {
            return Err(AbcError::BadDuration {
                line: self.line,
                text: self.src[start..self.pos].to_string(),
            });
        }
        // Simple-meter defaults; compound meters would use 3 for p in {5, 7, 9}.
        let q = q.unwrap_or(match p {
            2 | 4 | 8 => 3,
            _ => 2,
        });
        Ok(Token::Tuplet {
            text: self.src[start..self.pos].to_string(),
            p,
            q,
            r: r.unwrap_or(p),
        })
    }
}

/// Sum of event lengths in units of the unit note length, applying tuplets and
/// broken rhythm. Grace notes, decorations and annotations contribute nothing.
pub fn tokens_length(tokens: &[Token]) -> Duration {
    event_durations(tokens).into_iter().map(|(_, d)| d).sum()
}

/// Effective length of every note, rest and chord, in units of L, keyed by
/// token index. Tuplets and broken rhythm are applied.
pub fn event_durations(tokens: &[Token]) -> Vec<(usize, Duration)> {
    let mut events: Vec<Ratio<i64>> = Vec::new();
    let mut index: Vec<usize> = Vec::new();
    let mut tuplet: Option<(Ratio<i64>, u32)> = None;
    let mut pending: Option<Ratio<i64>> = None;
    for (i, t) in tokens.iter().enumerate() {
        let base = match t {
            Token::Note(n) => Some(n.multiplier.value.ratio()),
            Token::Rest { multiplier, .. } => Some(multiplier.value.ratio()),
            Token::Chord { inner, multiplier } => {
                let first = inner.iter().find_map(|t| match t {
                    Token::Note(n) => Some(n.multiplier.value.ratio()),
                    _ => None,
                });
                Some(first.unwrap_or(Ratio::from_integer(1)) * multiplier.value.ratio())
            }
            Token::Tuplet { p, q, r, .. } => {
                tuplet = Some((Ratio::new(*q as i64, *p as i64), *r));
                None
            }
            Token::Broken(s) => {
                let n = s.len() as u32;
                let short = Ratio::new(1, 1i64 << n);
                let long = Ratio::from_integer(2) - short;
                if let Some(last) = events.last_mut() {
                    if s.starts_with('>') {
                        *last *= long;
                        pending = Some(short);
                    } else {
                        *last *= short;
                        pending = Some(long);
                    }
                }
                None
            }
            _ => None,
        };
        if let Some(mut d) = base {
            if let Some((factor, remaining)) = tuplet.as_mut() {
                d *= *factor;
                *remaining -= 1;
                if *remaining == 0 {
                    tuplet = None;
                }
            }
            if let Some(f) = pending.take() {
                d *= f;
            }
            events.push(d);
            index.push(i);
        }
    }
    index.into_iter().zip(events.into_iter().map(Duration::from_ratio)).collect()
}
