use std::collections::HashMap;

use super::{EvalError, FeatureExtractor, SemanticFeature};
use crate::abc::token::event_durations;
use crate::abc::{parse_sheet, Bar, Duration, KeySignature, Pitch, Sheet, Token};

pub const BASELINE_DIM: usize = 64;

const PITCH: usize = 0;
const DURATION: usize = 12;
const INTERVAL: usize = 28;
const STATS: usize = 40;
const DENSITY: usize = 48;

/// Deterministic hand-built features:
///
/// | dims   | block                                                  |
/// |--------|--------------------------------------------------------|
/// | 0–11   | pitch-class histogram (sounding notes, chord members)  |
/// | 12–27  | event duration histogram, bin `round(log2 d) + 12`     |
/// | 28–39  | melodic interval histogram, bin `min(|semitones|, 11)` |
/// | 40–47  | texture statistics scaled to [0, 1]                    |
/// | 48–63  | notes-per-bar histogram, bin `min(count, 15)`          |
///
/// Each histogram block is normalised to sum 1 before the whole vector is
/// scaled to unit length. `d` is in whole notes.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaselineExtractor;

#[derive(Default)]
struct Tally {
    pitch: [f64; 12],
    duration: [f64; 16],
    interval: [f64; 12],
    density: [f64; 16],
    notes: usize,
    chords: usize,
    rests: usize,
    events: usize,
    fragments: usize,
    low: i32,
    high: i32,
}

impl Tally {
    fn pitch(&mut self, midi: i32) {
        self.pitch[midi.rem_euclid(12) as usize] += 1.0;
        if self.notes == 0 {
            self.low = midi;
            self.high = midi;
        }
        self.low = self.low.min(midi);
        self.high = self.high.max(midi);
        self.notes += 1;
    }
}

fn duration_bin(d: Duration) -> usize {
    let b = d.to_f64().log2().round() as i64 + 12;
    b.clamp(0, 15) as usize
}

/// Sounding pitch of a note, updating the bar's accidental memory.
fn resolve(p: &Pitch, key: &KeySignature, carry: &mut HashMap<(char, i32), i32>) -> i32 {
    let alt = match p.accidental {
        Some(a) => {
            carry.insert((p.letter, p.octave), a);
            a
        }
        None => carry.get(&(p.letter, p.octave)).copied().unwrap_or_else(|| key.alteration(p.letter)),
    };
    p.midi(alt)
}

fn scan_bar(bar: &Bar, key: &mut KeySignature, unit: Duration, last: &mut Option<i32>, t: &mut Tally) {
    let mut carry = HashMap::new();
    let durations: HashMap<usize, Duration> = event_durations(&bar.tokens).into_iter().collect();
    let mut per_bar = 0usize;
    for (i, tok) in bar.tokens.iter().enumerate() {
        let mut melodic = None;
        match tok {
            Token::InlineField { field: 'K', value } => {
                if let Ok(k) = KeySignature::parse(value) {
                    *key = k;
                }
            }
            Token::Note(n) => {
                let m = resolve(&n.pitch, key, &mut carry);
                t.pitch(m);
                melodic = Some(m);
            }
            Token::Chord { inner, .. } => {
                t.chords += 1;
                for it in inner {
                    if let Token::Note(n) = it {
                        let m = resolve(&n.pitch, key, &mut carry);
                        t.pitch(m);
                        melodic.get_or_insert(m);
                    }
                }
            }
            Token::Rest { .. } => t.rests += 1,
            _ => {}
        }
        if let Some(d) = durations.get(&i) {
            t.events += 1;
            if tok.is_sounding() {
                t.duration[duration_bin(d.scale(unit.ratio()))] += 1.0;
                per_bar += 1;
            }
        }
        if let Some(m) = melodic {
            if let Some(prev) = *last {
                t.interval[((m - prev).unsigned_abs() as usize).min(11)] += 1.0;
            }
            *last = Some(m);
        }
    }
    t.density[per_bar.min(15)] += 1.0;
    t.fragments += 1;
}

fn put_histogram(out: &mut [f64], h: &[f64]) {
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        for (o, v) in out.iter_mut().zip(h) {
            *o = v / total;
        }
    }
}

pub fn sheet_features(sheet: &Sheet) -> SemanticFeature {
    let unit = sheet.header.unit_length();
    let mut t = Tally::default();
    for voice in &sheet.voices {
        let mut key = sheet.header.key.clone();
        let mut last = None;
        for bar in &voice.bars {
            scan_bar(bar, &mut key, unit, &mut last, &mut t);
        }
    }
    let mut v = vec![0.0; BASELINE_DIM];
    put_histogram(&mut v[PITCH..DURATION], &t.pitch);
    put_histogram(&mut v[DURATION..INTERVAL], &t.duration);
    put_histogram(&mut v[INTERVAL..STATS], &t.interval);
    put_histogram(&mut v[DENSITY..], &t.density);
    let (num, den) = sheet.header.meter.as_ref().map_or((4, 4), |m| m.parts());
    let bars = sheet.bar_count();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let stats = [
        sheet.voices.len() as f64 / 16.0,
        frac(t.notes, t.fragments) / 32.0,
        frac(t.rests, t.events),
        frac(t.chords, t.events - t.rests),
        if t.notes == 0 { 0.0 } else { (t.high - t.low) as f64 / 88.0 },
        num as f64 / 16.0,
        den as f64 / 16.0,
        bars as f64 / 256.0,
    ];
    for (o, s) in v[STATS..DENSITY].iter_mut().zip(stats) {
        *o = s.clamp(0.0, 1.0);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    SemanticFeature(v)
}

impl FeatureExtractor for BaselineExtractor {
    fn name(&self) -> &str {
        "baseline"
    }

    fn dim(&self) -> usize {
        BASELINE_DIM
    }

    fn extract(&self, sheet_text: &str) -> Result<SemanticFeature, EvalError> {
        Ok(sheet_features(&parse_sheet(sheet_text)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(t: &str) -> Vec<f64> {
        BaselineExtractor.extract(t).unwrap().0
    }

    #[test]
    fn single_note() {
        let v = feats("X:1\nL:1/4\nM:4/4\nK:C\nC|\n");
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(v[0] > 0.0);
        assert!(v[1..12].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transposition_moves_only_pitch_block() {
        let a = feats("X:1\nL:1/8\nM:2/4\nK:C\nCEGc|E2G2|\n");
        let b = feats("X:1\nL:1/8\nM:2/4\nK:C\nDFAd|F2A2|\n");
        assert_ne!(&a[..12], &b[..12]);
        assert_eq!(&a[12..28], &b[12..28]);
        assert_eq!(&a[48..], &b[48..]);
    }

    #[test]
    fn hand_computed_histograms() {
        // G major: F is sharp. Bar 1: G A B ^c (quarters in L:1/4), carry
        // keeps the second c sharp; bar 2: d2 [GB]2.
        let text = "X:1\nL:1/4\nM:4/4\nK:G\nG A ^c c|d2 [GB]2|\n";
        let v = feats(text);
        // Unnormalised oracle, computed by hand.
        let mut raw = vec![0.0; 64];
        // pitch classes: G(7) A(9) C#(1) C#(1) D(2) G(7) B(11) => 7 notes
        for (pc, n) in [(7, 2.0), (9, 1.0), (1, 2.0), (2, 1.0), (11, 1.0)] {
            raw[pc] = n / 7.0;
        }
        // durations: four quarters (log2 1/4 = -2 -> bin 10), two halves (bin 11)
        raw[12 + 10] = 4.0 / 6.0;
        raw[12 + 11] = 2.0 / 6.0;
        // intervals: G->A 2, A->C# 4, C#->C# 0, C#->D 1, D->G(chord first) 7
        for b in [2, 4, 0, 1, 7] {
            raw[28 + b] += 1.0 / 5.0;
        }
        // stats: 1 voice, 7 notes / 2 bars, no rests, 1 chord of 6 events,
        // range G4(67)..D5(74) = 7, meter 4/4, 2 bars
        let stats = [1.0 / 16.0, 3.5 / 32.0, 0.0, 1.0 / 6.0, 7.0 / 88.0, 0.25, 0.25, 2.0 / 256.0];
        raw[40..48].copy_from_slice(&stats);
        // density: 4 events then 2 events
        raw[48 + 4] = 0.5;
        raw[48 + 2] = 0.5;
        let n = raw.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        for (a, b) in v.iter().zip(raw.iter().map(|x| x / n)) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn unparseable_is_an_error() {
        assert!(matches!(BaselineExtractor.extract("X:1\nK:C\nC [D|\n"), Err(EvalError::Parse(_))));
    }
}
