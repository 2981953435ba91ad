//! Key signatures, modes and circle-of-fifths spelling arithmetic.

use std::fmt;

use super::AbcError;

/// Diatonic letters in scale order starting from C.
pub const LETTERS: [char; 7] = ['C', 'D', 'E', 'F', 'G', 'A', 'B'];
const NATURAL_SEMITONES: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Letters ordered along the circle of fifths, starting one fifth below C.
const FIFTHS_ORDER: [char; 7] = ['F', 'C', 'G', 'D', 'A', 'E', 'B'];

/// Inclusive range of key-signature sizes supported for transposition.
pub const MIN_FIFTHS: i32 = -7;
pub const MAX_FIFTHS: i32 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
    Dorian,
    Phrygian,
    Lydian,
    Mixolydian,
    Locrian,
}

impl Mode {
    /// Offset in fifths between the key signature and the tonic's major signature.
    pub fn fifths_offset(self) -> i32 {
        match self {
            Mode::Lydian => 1,
            Mode::Major => 0,
            Mode::Mixolydian => -1,
            Mode::Dorian => -2,
            Mode::Minor => -3,
            Mode::Phrygian => -4,
            Mode::Locrian => -5,
        }
    }

    fn from_word(word: &str) -> Option<Mode> {
        let w = word.to_ascii_lowercase();
        if w == "m" {
            return Some(Mode::Minor);
        }
        if w.len() < 3 {
            return None;
        }
        match &w[..3] {
            "maj" | "ion" => Some(Mode::Major),
            "min" | "aeo" => Some(Mode::Minor),
            "dor" => Some(Mode::Dorian),
            "phr" => Some(Mode::Phrygian),
            "lyd" => Some(Mode::Lydian),
            "mix" => Some(Mode::Mixolydian),
            "loc" => Some(Mode::Locrian),
            _ => None,
        }
    }
}

/// A parsed `K:` field. `mode_text` and `extra` keep the source spelling so the
/// field serializes back unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KeySignature {
    pub tonic: char,
    pub accidental: i32,
    pub mode: Mode,
    pub mode_text: String,
    pub extra: String,
}

impl KeySignature {
    pub fn major(tonic: char, accidental: i32) -> Self {
        KeySignature {
            tonic,
            accidental,
            mode: Mode::Major,
            mode_text: String::new(),
            extra: String::new(),
        }
    }

    pub fn parse(value: &str) -> Result<Self, AbcError> {
        let v = value.trim_start();
        let mut chars = v.char_indices().peekable();
        let tonic = match chars.next() {
            Some((_, c)) if ('A'..='G').contains(&c) => c,
            _ => return Err(AbcError::UnsupportedKey(value.trim().to_string())),
        };
        let mut pos = 1;
        let mut accidental = 0;
        if let Some(&(_, c)) = chars.peek() {
            if c == '#' {
                accidental = 1;
                pos += 1;
            } else if c == 'b' {
                accidental = -1;
                pos += 1;
            }
        }
        let rest = &v[pos..];
        let trimmed = rest.trim_start();
        let lead = rest.len() - trimmed.len();
        let word_len = trimmed
            .find(|c: char| !c.is_ascii_alphabetic())
            .unwrap_or(trimmed.len());
        let word = &trimmed[..word_len];
        let (mode, mode_text, extra) = match Mode::from_word(word) {
            Some(m) if !word.is_empty() => (
                m,
                rest[..lead + word_len].to_string(),
                trimmed[word_len..].to_string(),
            ),
            _ => (Mode::Major, String::new(), rest.to_string()),
        };
        Ok(KeySignature {
            tonic,
            accidental,
            mode,
            mode_text,
            extra,
        })
    }

    /// Number of sharps (positive) or flats (negative) in the signature.
    pub fn fifths(&self) -> i32 {
        tonic_fifths(self.tonic, self.accidental) + self.mode.fifths_offset()
    }

    pub fn is_supported(&self) -> bool {
        (MIN_FIFTHS..=MAX_FIFTHS).contains(&self.fifths())
    }

    /// The same mode with the signature moved by `offset` fifths.
    pub fn transposed(&self, offset: i32) -> Result<Self, AbcError> {
        let target = self.fifths() + offset;
        if !(MIN_FIFTHS..=MAX_FIFTHS).contains(&target) {
            return Err(AbcError::UnsupportedKey(format!(
                "{} moved by {offset} fifths",
                self
            )));
        }
        let (tonic, accidental) = spell_tonic(tonic_fifths(self.tonic, self.accidental) + offset)
            .ok_or_else(|| AbcError::UnsupportedKey(format!("{} moved by {offset} fifths", self)))?;
        Ok(KeySignature {
            tonic,
            accidental,
            ..self.clone()
        })
    }

    /// Alteration (in semitones) the signature applies to a letter.
    pub fn alteration(&self, letter: char) -> i32 {
        signature_alteration(self.fifths(), letter)
    }
}

impl fmt::Display for KeySignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acc = match self.accidental {
            1 => "#",
            -1 => "b",
            _ => "",
        };
        write!(f, "{}{}{}{}", self.tonic, acc, self.mode_text, self.extra)
    }
}

pub fn letter_index(letter: char) -> usize {
    LETTERS
        .iter()
        .position(|&l| l == letter.to_ascii_uppercase())
        .expect("pitch letter")
}

pub fn natural_semitone(letter_idx: usize) -> i32 {
    NATURAL_SEMITONES[letter_idx]
}

fn tonic_fifths(tonic: char, accidental: i32) -> i32 {
    let pos = FIFTHS_ORDER.iter().position(|&l| l == tonic).unwrap_or(1) as i32;
    pos - 1 + 7 * accidental
}

fn spell_tonic(fifths: i32) -> Option<(char, i32)> {
    let letter = FIFTHS_ORDER[(fifths + 1).rem_euclid(7) as usize];
    let accidental = (fifths + 1).div_euclid(7);
    (-1..=1).contains(&accidental).then_some((letter, accidental))
}

/// Alteration applied to `letter` by a signature with `fifths` sharps/flats.
pub fn signature_alteration(fifths: i32, letter: char) -> i32 {
    let pos = FIFTHS_ORDER
        .iter()
        .position(|&l| l == letter.to_ascii_uppercase())
        .expect("pitch letter") as i32;
    if fifths > 0 && pos < fifths {
        1
    } else if fifths < 0 && pos >= 7 + fifths {
        -1
    } else {
        0
    }
}

/// A transposition interval expressed as diatonic letter steps plus semitones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub letter_steps: i32,
    pub semitones: i32,
}

impl Interval {
    /// The interval spanned by `fifths` perfect fifths, octave-reduced so the
    /// letter displacement lies in -3..=3.
    pub fn from_fifths(fifths: i32) -> Self {
        let raw_letters = 4 * fifths;
        let octaves = (raw_letters as f64 / 7.0).round() as i32;
        Interval {
            letter_steps: raw_letters - 7 * octaves,
            semitones: 7 * fifths - 12 * octaves,
        }
    }
}
