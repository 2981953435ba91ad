//! Key transposition along the circle of fifths and augmentation key sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::abc::key::{letter_index, natural_semitone, Interval, MAX_FIFTHS, MIN_FIFTHS};
use crate::abc::{AbcError, Bar, KeySignature, Pitch, Sheet, Token};

use super::{InterleavedSheet, PreprocessError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyChoice {
    pub target_key: KeySignature,
    /// Signed distance in fifths from the original key.
    pub fifths_offset: i32,
}

fn pitch_semitones(p: &Pitch) -> i32 {
    12 * p.octave + natural_semitone(letter_index(p.letter))
}

fn transpose_pitch(p: &Pitch, iv: Interval) -> Result<Pitch, AbcError> {
    let moved = Pitch::from_diatonic(p.diatonic() + iv.letter_steps, None);
    let delta = iv.semitones - (pitch_semitones(&moved) - pitch_semitones(p));
    let accidental = match p.accidental {
        Some(a) => {
            let a = a + delta;
            if !(-2..=2).contains(&a) {
                return Err(AbcError::AccidentalOverflow);
            }
            Some(a)
        }
        None => None,
    };
    Ok(Pitch { accidental, ..moved })
}

fn transpose_tokens(tokens: &mut [Token], iv: Interval, offset: i32) -> Result<(), AbcError> {
    for t in tokens {
        match t {
            Token::Note(n) => n.pitch = transpose_pitch(&n.pitch, iv)?,
            Token::Chord { inner, .. } | Token::Grace { inner, .. } => {
                transpose_tokens(inner, iv, offset)?
            }
            Token::InlineField { field: 'K', value } => {
                if let Ok(k) = KeySignature::parse(value) {
                    *value = k.transposed(offset)?.to_string();
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Moves every written pitch of `bar` by `offset` fifths (octave-reduced).
/// Notes without an explicit accidental stay unmarked; the new key signature
/// carries their alteration.
pub fn transpose_bar(bar: &Bar, offset: i32) -> Result<Bar, AbcError> {
    let mut out = bar.clone();
    if offset != 0 {
        transpose_tokens(&mut out.tokens, Interval::from_fifths(offset), offset)?;
        out.rebuild_raw();
    }
    Ok(out)
}

pub fn transpose_sheet(sheet: &Sheet, offset: i32) -> Result<Sheet, PreprocessError> {
    let mut out = sheet.clone();
    out.header.key = sheet.header.key.transposed(offset)?;
    for v in &mut out.voices {
        for b in &mut v.bars {
            *b = transpose_bar(b, offset)?;
        }
    }
    Ok(out)
}

pub fn transpose(isheet: &InterleavedSheet, choice: &KeyChoice) -> Result<InterleavedSheet, PreprocessError> {
    let key = isheet.header.key.transposed(choice.fifths_offset)?;
    if key.fifths() != choice.target_key.fifths() {
        return Err(PreprocessError::Abc(AbcError::UnsupportedKey(
            choice.target_key.to_string(),
        )));
    }
    let mut out = isheet.clone();
    out.header.key = key;
    for m in &mut out.measures {
        for b in m.iter_mut() {
            *b = transpose_bar(b, choice.fifths_offset)?;
        }
    }
    Ok(out)
}

/// Fine-tuning offset weights: `4 - |d|` for d in -3..=3, restricted to targets
/// inside the 15-key range and renormalized.
pub fn finetune_key_distribution(original_fifths: i32) -> Vec<(i32, f64)> {
    let valid: Vec<(i32, f64)> = (-3..=3)
        .filter(|d| (MIN_FIFTHS..=MAX_FIFTHS).contains(&(original_fifths + d)))
        .map(|d: i32| (d, (4 - d.abs()) as f64))
        .collect();
    let total: f64 = valid.iter().map(|(_, w)| w).sum();
    valid.into_iter().map(|(d, w)| (d, w / total)).collect()
}

pub fn choose_key<R: Rng + ?Sized>(
    stage: Stage,
    original: &KeySignature,
    rng: &mut R,
) -> Result<KeyChoice, PreprocessError> {
    let f = original.fifths();
    if !original.is_supported() {
        return Err(PreprocessError::Abc(AbcError::UnsupportedKey(original.to_string())));
    }
    let offset = match stage {
        Stage::Pretrain => rng.gen_range(MIN_FIFTHS..=MAX_FIFTHS) - f,
        Stage::Finetune => {
            let dist = finetune_key_distribution(f);
            let idx = WeightedIndex::new(dist.iter().map(|(_, w)| *w))
                .expect("non-empty key distribution")
                .sample(rng);
            dist[idx].0
        }
    };
    Ok(KeyChoice {
        target_key: original.transposed(offset)?,
        fifths_offset: offset,
    })
}
