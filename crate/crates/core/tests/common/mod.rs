//! Random generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use scoregen::midi::{MidiEvent, Timing};

const KEYS: &[&str] = &["C", "G", "D", "A", "E", "F", "Bb", "Eb", "Am", "Em", "Dm", "F#m", "Cb", "C#", "D dor"];
const METERS: &[&str] = &["4/4", "3/4", "2/4", "6/8", "C", "C|", "2/2", "5/4"];
const UNITS: &[&str] = &["1/8", "1/4", "1/16"];
const DURS: &[&str] = &["", "", "", "2", "3", "4", "/2", "/", "3/2", "//", "6"];

fn note<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    s.push_str(["", "", "", "^", "_", "=", "^^", "__"].choose(rng).unwrap());
    let letter = *b"ABCDEFGabcdefg".choose(rng).unwrap() as char;
    s.push(letter);
    if letter.is_ascii_uppercase() {
        s.push_str(["", "", ",", ",,"].choose(rng).unwrap());
    } else {
        s.push_str(["", "", "'", "''"].choose(rng).unwrap());
    }
    s
}

fn element<R: Rng>(rng: &mut R) -> String {
    let dur = *DURS.choose(rng).unwrap();
    match rng.gen_range(0..20) {
        0..=9 => format!("{}{dur}", note(rng)),
        10 => format!("z{dur}"),
        11 => format!("x{dur}"),
        12 => format!("[{}{}{}]{dur}", note(rng), note(rng), note(rng)),
        13 => format!("\"{}\"{}", ["Am", "G7", "^dolce", "_cresc.", "C"].choose(rng).unwrap(), note(rng)),
        14 => format!("!{}!{}", ["trill", "fermata", "p", "f", "mf"].choose(rng).unwrap(), note(rng)),
        15 => format!("({}{})", note(rng), note(rng)),
        16 => format!("(3{}{}{}", note(rng), note(rng), note(rng)),
        17 => format!("{}>{}", note(rng), note(rng)),
        18 => format!("{{{}}}{}", note(rng), note(rng)),
        _ => format!("{}-{}", note(rng), note(rng)),
    }
}

/// One bar of music ending in a barline.
pub fn bar<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    if rng.gen_bool(0.05) {
        s.push_str(["[M:3/4]", "[K:G]", "[L:1/16]"].choose(rng).unwrap());
    }
    for i in 0..rng.gen_range(1..6) {
        if i > 0 && rng.gen_bool(0.3) {
            s.push(' ');
        }
        s.push_str(&element(rng));
    }
    s.push_str(["|", "|", "|", "||", ":|", "|]"].choose(rng).unwrap());
    s
}

/// A random sheet in this dialect: optional header fields, one to three
/// voices, per-voice or interleaved bodies, inline fields and lyrics.
pub fn random_abc<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    if rng.gen_bool(0.2) {
        s.push_str("%%MIDI program 1\n");
    }
    s.push_str(&format!("X:{}\n", rng.gen_range(1..100)));
    if rng.gen_bool(0.5) {
        s.push_str("T:Random Piece\n");
    }
    if rng.gen_bool(0.8) {
        s.push_str(&format!("L:{}\n", UNITS.choose(rng).unwrap()));
    }
    if rng.gen_bool(0.8) {
        s.push_str(&format!("M:{}\n", METERS.choose(rng).unwrap()));
    }
    if rng.gen_bool(0.2) {
        s.push_str("Q:1/4=96\n");
    }
    let voices = rng.gen_range(1..=3);
    let declare = rng.gen_bool(0.7);
    if voices > 1 && rng.gen_bool(0.3) {
        s.push_str("%%score {1 2} 3\n");
    }
    if declare {
        for v in 1..=voices {
            let props = [" clef=bass", " name=\"Violin I\"", "", ""].choose(rng).unwrap();
            s.push_str(&format!("V:{v}{props}\n"));
        }
    }
    s.push_str(&format!("K:{}\n", KEYS.choose(rng).unwrap()));
    let bars = rng.gen_range(1..8);
    if rng.gen_bool(0.5) {
        for k in 0..bars {
            if rng.gen_bool(0.5) {
                s.push_str(&format!("[r:{}/{}]", k + 1, bars - k - 1));
            }
            for v in 1..=voices {
                s.push_str(&format!("[V:{v}]{}", bar(rng)));
            }
            s.push('\n');
        }
    } else {
        for v in 1..=voices {
            if voices > 1 || declare {
                s.push_str(&format!("V:{v}\n"));
            }
            let mut line = String::new();
            for k in 0..bars {
                line.push_str(&bar(rng));
                if rng.gen_bool(0.3) || k + 1 == bars {
                    s.push_str(&line);
                    s.push('\n');
                    line.clear();
                }
            }
            if rng.gen_bool(0.2) {
                s.push_str("w: la la la\n");
            }
        }
    }
    s
}

fn timing<R: Rng>(rng: &mut R) -> Timing {
    Timing {
        time1: rng.gen_range(0..128),
        time2: rng.gen_range(0..16),
        track: rng.gen_range(0..128),
    }
}

/// Any event whose fields lie in their token ranges.
pub fn random_event<R: Rng>(rng: &mut R) -> MidiEvent {
    let at = timing(rng);
    match rng.gen_range(0..10) {
        0..=3 => MidiEvent::Note {
            at,
            channel: rng.gen_range(0..16),
            pitch: rng.gen_range(0..128),
            velocity: rng.gen_range(0..128),
            duration: rng.gen_range(1..=2048),
        },
        4 => MidiEvent::ProgramChange {
            at,
            channel: rng.gen_range(0..16),
            program: rng.gen_range(0..128),
        },
        5 => MidiEvent::ControlChange {
            at,
            channel: rng.gen_range(0..16),
            controller: rng.gen_range(0..128),
            value: rng.gen_range(0..128),
        },
        6 => MidiEvent::SetTempo {
            at,
            bpm: rng.gen_range(1..=384),
        },
        7 => MidiEvent::TimeSignature {
            at,
            numerator: rng.gen_range(1..=16),
            denominator: *[2u8, 4, 8, 16].choose(rng).unwrap(),
        },
        8 => MidiEvent::KeySignature {
            at,
            accidentals: rng.gen_range(-7..=7),
            mode: rng.gen_range(0..2),
        },
        _ => match rng.gen_range(0..4) {
            0 => MidiEvent::Bos,
            1 => MidiEvent::Eos,
            2 => MidiEvent::PeriodPrompt(rng.gen_range(0..3)),
            _ => MidiEvent::ComposerPrompt(rng.gen_range(0..36)),
        },
    }
}

/// Arbitrary printable text with newlines and some ABC punctuation.
pub fn random_text<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGabcdefgz|[]:/0123456789 ^_=,'\"!(){}<>-%\nXKLMV\t";
    let n = rng.gen_range(0..200);
    let mut s: String = (0..n).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect();
    if rng.gen_bool(0.3) {
        s.push(char::from(rng.gen_range(0x80u8..=0xff)));
    }
    s
}
