//! Fixed-length event tokens for MIDI: each event becomes eight ids, an event
//! type followed by its parameters and trailing padding.

mod smf;
mod vocab;

use std::fmt::Write as _;

use thiserror::Error;

pub use smf::{read_smf, SmfFile};
pub use vocab::{Family, Vocab, BASE_VOCAB_SIZE, EXTENDED_VOCAB_SIZE};
use vocab::base;

pub const SEQ_LEN: usize = 8;
pub const PAD: u32 = BASE_VOCAB_SIZE - 1;
/// Sixteen subdivisions per beat for both onset and duration.
pub const STEPS_PER_BEAT: u64 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("{field} = {value} out of range")]
    ParamOutOfRange { field: &'static str, value: i64 },
    #[error("token {0} is not an event type")]
    BadEventType(u32),
    #[error("slot {slot}: token {token} is not a {expected:?} token")]
    TokenFamilyMismatch { slot: usize, token: u32, expected: Family },
    #[error("slot {slot}: bad padding")]
    BadPadding { slot: usize },
    #[error("event {index} is earlier than its predecessor")]
    NegativeDelta { index: usize },
    #[error("midi file: {0}")]
    Smf(String),
    #[error("token file line {line}: {reason}")]
    TokenFile { line: usize, reason: String },
}

/// Onset and track shared by every timed event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Timing {
    /// Whole beats since the previous event.
    pub time1: u8,
    /// Sixteenth-of-a-beat position within the beat.
    pub time2: u8,
    pub track: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MidiEvent {
    Note {
        at: Timing,
        channel: u8,
        pitch: u8,
        velocity: u8,
        /// Sixteenths of a beat, 1..=2048.
        duration: u16,
    },
    ProgramChange {
        at: Timing,
        channel: u8,
        program: u8,
    },
    ControlChange {
        at: Timing,
        channel: u8,
        controller: u8,
        value: u8,
    },
    SetTempo {
        at: Timing,
        bpm: u16,
    },
    TimeSignature {
        at: Timing,
        numerator: u8,
        denominator: u8,
    },
    KeySignature {
        at: Timing,
        accidentals: i8,
        mode: u8,
    },
    Bos,
    Eos,
    PeriodPrompt(u8),
    ComposerPrompt(u8),
}

const DENOMINATORS: [u8; 4] = [2, 4, 8, 16];

fn tok(f: Family, field: &'static str, value: i64, lo: i64) -> Result<u32, CodecError> {
    let off = value - lo;
    if off < 0 || off >= f.size() as i64 {
        return Err(CodecError::ParamOutOfRange { field, value });
    }
    Ok(base(f) + off as u32)
}

fn timing(at: &Timing) -> Result<[u32; 3], CodecError> {
    Ok([
        tok(Family::Time1, "time1", at.time1 as i64, 0)?,
        tok(Family::Time2, "time2", at.time2 as i64, 0)?,
        tok(Family::Track, "track", at.track as i64, 0)?,
    ])
}

fn event_id(index: u32) -> u32 {
    base(Family::EventType) + index
}

/// Event-type index within its family.
fn type_index(e: &MidiEvent) -> Option<u32> {
    Some(match e {
        MidiEvent::Note { .. } => 0,
        MidiEvent::ProgramChange { .. } => 1,
        MidiEvent::ControlChange { .. } => 2,
        MidiEvent::SetTempo { .. } => 3,
        MidiEvent::TimeSignature { .. } => 4,
        MidiEvent::KeySignature { .. } => 5,
        MidiEvent::Bos => 6,
        MidiEvent::Eos => 7,
        MidiEvent::PeriodPrompt(_) | MidiEvent::ComposerPrompt(_) => return None,
    })
}

pub fn encode_event(e: &MidiEvent) -> Result<[u32; SEQ_LEN], CodecError> {
    let mut ids: Vec<u32> = Vec::with_capacity(SEQ_LEN);
    match e {
        MidiEvent::PeriodPrompt(p) => return Ok([tok(Family::Period, "period", *p as i64, 0)?; SEQ_LEN]),
        MidiEvent::ComposerPrompt(c) => return Ok([tok(Family::Composer, "composer", *c as i64, 0)?; SEQ_LEN]),
        _ => ids.push(event_id(type_index(e).expect("timed or marker event"))),
    }
    match e {
        MidiEvent::Note {
            at,
            channel,
            pitch,
            velocity,
            duration,
        } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::Channel, "channel", *channel as i64, 0)?);
            ids.push(tok(Family::Pitch, "pitch", *pitch as i64, 0)?);
            ids.push(tok(Family::Velocity, "velocity", *velocity as i64, 0)?);
            ids.push(tok(Family::Duration, "duration", *duration as i64, 1)?);
        }
        MidiEvent::ProgramChange { at, channel, program } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::Channel, "channel", *channel as i64, 0)?);
            ids.push(tok(Family::Program, "program", *program as i64, 0)?);
        }
        MidiEvent::ControlChange {
            at,
            channel,
            controller,
            value,
        } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::Channel, "channel", *channel as i64, 0)?);
            ids.push(tok(Family::Controller, "controller", *controller as i64, 0)?);
            ids.push(tok(Family::ControllerValue, "controller value", *value as i64, 0)?);
        }
        MidiEvent::SetTempo { at, bpm } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::Bpm, "bpm", *bpm as i64, 1)?);
        }
        MidiEvent::TimeSignature {
            at,
            numerator,
            denominator,
        } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::Numerator, "numerator", *numerator as i64, 1)?);
            let d = DENOMINATORS
                .iter()
                .position(|x| x == denominator)
                .ok_or(CodecError::ParamOutOfRange {
                    field: "denominator",
                    value: *denominator as i64,
                })?;
            ids.push(base(Family::Denominator) + d as u32);
        }
        MidiEvent::KeySignature { at, accidentals, mode } => {
            ids.extend(timing(at)?);
            ids.push(tok(Family::KeyAccidentals, "key accidentals", *accidentals as i64, -7)?);
            ids.push(tok(Family::Mode, "mode", *mode as i64, 0)?);
        }
        MidiEvent::Bos | MidiEvent::Eos => {}
        MidiEvent::PeriodPrompt(_) | MidiEvent::ComposerPrompt(_) => unreachable!(),
    }
    let mut out = [PAD; SEQ_LEN];
    out[..ids.len()].copy_from_slice(&ids);
    Ok(out)
}

struct Slots<'a> {
    s: &'a [u32; SEQ_LEN],
    at: usize,
}

impl Slots<'_> {
    fn take(&mut self, f: Family, lo: i64) -> Result<i64, CodecError> {
        let t = self.s[self.at];
        let b = base(f);
        if t < b || t >= b + f.size() {
            return Err(CodecError::TokenFamilyMismatch {
                slot: self.at,
                token: t,
                expected: f,
            });
        }
        self.at += 1;
        Ok((t - b) as i64 + lo)
    }

    fn timing(&mut self) -> Result<Timing, CodecError> {
        Ok(Timing {
            time1: self.take(Family::Time1, 0)? as u8,
            time2: self.take(Family::Time2, 0)? as u8,
            track: self.take(Family::Track, 0)? as u8,
        })
    }
}

pub fn decode_seq(s: &[u32; SEQ_LEN]) -> Result<MidiEvent, CodecError> {
    let head = s[0];
    for (f, ctor) in [
        (Family::Period, MidiEvent::PeriodPrompt as fn(u8) -> MidiEvent),
        (Family::Composer, MidiEvent::ComposerPrompt),
    ] {
        let b = base(f);
        if head >= b && head < b + f.size() {
            if let Some(slot) = s.iter().position(|&t| t != head) {
                return Err(CodecError::BadPadding { slot });
            }
            return Ok(ctor((head - b) as u8));
        }
    }
    let eb = base(Family::EventType);
    if head < eb || head >= eb + Family::EventType.size() {
        return Err(CodecError::BadEventType(head));
    }
    let mut sl = Slots { s, at: 1 };
    let e = match head - eb {
        0 => MidiEvent::Note {
            at: sl.timing()?,
            channel: sl.take(Family::Channel, 0)? as u8,
            pitch: sl.take(Family::Pitch, 0)? as u8,
            velocity: sl.take(Family::Velocity, 0)? as u8,
            duration: sl.take(Family::Duration, 1)? as u16,
        },
        1 => MidiEvent::ProgramChange {
            at: sl.timing()?,
            channel: sl.take(Family::Channel, 0)? as u8,
            program: sl.take(Family::Program, 0)? as u8,
        },
        2 => MidiEvent::ControlChange {
            at: sl.timing()?,
            channel: sl.take(Family::Channel, 0)? as u8,
            controller: sl.take(Family::Controller, 0)? as u8,
            value: sl.take(Family::ControllerValue, 0)? as u8,
        },
        3 => MidiEvent::SetTempo {
            at: sl.timing()?,
            bpm: sl.take(Family::Bpm, 1)? as u16,
        },
        4 => MidiEvent::TimeSignature {
            at: sl.timing()?,
            numerator: sl.take(Family::Numerator, 1)? as u8,
            denominator: DENOMINATORS[sl.take(Family::Denominator, 0)? as usize],
        },
        5 => MidiEvent::KeySignature {
            at: sl.timing()?,
            accidentals: sl.take(Family::KeyAccidentals, -7)? as i8,
            mode: sl.take(Family::Mode, 0)? as u8,
        },
        6 => MidiEvent::Bos,
        _ => MidiEvent::Eos,
    };
    if let Some(off) = s[sl.at..].iter().position(|&t| t != PAD) {
        return Err(CodecError::BadPadding { slot: sl.at + off });
    }
    Ok(e)
}

/// Event content with an absolute onset in ticks, before beat encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimedKind {
    Note {
        channel: u8,
        pitch: u8,
        velocity: u8,
        duration_ticks: u64,
    },
    ProgramChange {
        channel: u8,
        program: u8,
    },
    ControlChange {
        channel: u8,
        controller: u8,
        value: u8,
    },
    SetTempo {
        bpm: u16,
    },
    TimeSignature {
        numerator: u8,
        denominator: u8,
    },
    KeySignature {
        accidentals: i8,
        mode: u8,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedEvent {
    pub tick: u64,
    pub track: u8,
    pub kind: TimedKind,
}

/// Duration in sixteenths of a beat, rounded, within 1..=2048.
pub fn quantize_duration(ticks: u64, ticks_per_beat: u64) -> u16 {
    let steps = (ticks * STEPS_PER_BEAT + ticks_per_beat / 2) / ticks_per_beat;
    steps.clamp(1, Family::Duration.size() as u64) as u16
}

/// Converts absolute ticks to beat deltas and subdivisions. Gaps of more
/// than 127 beats are clamped with a warning.
pub fn encode_timeline(events: &[TimedEvent], ticks_per_beat: u64) -> Result<Vec<[u32; SEQ_LEN]>, CodecError> {
    if ticks_per_beat == 0 {
        return Err(CodecError::ParamOutOfRange {
            field: "ticks per beat",
            value: 0,
        });
    }
    let mut out = Vec::with_capacity(events.len());
    let mut prev_tick = 0;
    let mut prev_beat = 0;
    for (i, ev) in events.iter().enumerate() {
        if ev.tick < prev_tick {
            return Err(CodecError::NegativeDelta { index: i });
        }
        prev_tick = ev.tick;
        let beat = ev.tick / ticks_per_beat;
        let frac = ev.tick % ticks_per_beat;
        let mut delta = beat - prev_beat;
        if delta > 127 {
            log::warn!("event {i}: {delta}-beat gap clamped to 127");
            delta = 127;
        }
        prev_beat = beat;
        let at = Timing {
            time1: delta as u8,
            time2: (frac * STEPS_PER_BEAT / ticks_per_beat) as u8,
            track: ev.track,
        };
        let e = match ev.kind {
            TimedKind::Note {
                channel,
                pitch,
                velocity,
                duration_ticks,
            } => MidiEvent::Note {
                at,
                channel,
                pitch,
                velocity,
                duration: quantize_duration(duration_ticks, ticks_per_beat),
            },
            TimedKind::ProgramChange { channel, program } => MidiEvent::ProgramChange { at, channel, program },
            TimedKind::ControlChange {
                channel,
                controller,
                value,
            } => MidiEvent::ControlChange {
                at,
                channel,
                controller,
                value,
            },
            TimedKind::SetTempo { bpm } => MidiEvent::SetTempo { at, bpm },
            TimedKind::TimeSignature { numerator, denominator } => MidiEvent::TimeSignature {
                at,
                numerator,
                denominator,
            },
            TimedKind::KeySignature { accidentals, mode } => MidiEvent::KeySignature { at, accidentals, mode },
        };
        out.push(encode_event(&e)?);
    }
    Ok(out)
}

/// Optional period and composer prompts, BOS, the events, EOS.
pub fn frame_piece(
    period: Option<u8>,
    composer: Option<u8>,
    body: &[[u32; SEQ_LEN]],
) -> Result<Vec<[u32; SEQ_LEN]>, CodecError> {
    let mut out = Vec::with_capacity(body.len() + 4);
    if let Some(p) = period {
        out.push(encode_event(&MidiEvent::PeriodPrompt(p))?);
    }
    if let Some(c) = composer {
        out.push(encode_event(&MidiEvent::ComposerPrompt(c))?);
    }
    out.push(encode_event(&MidiEvent::Bos)?);
    out.extend_from_slice(body);
    out.push(encode_event(&MidiEvent::Eos)?);
    Ok(out)
}

/// One event per line, eight space-separated ids.
pub fn write_token_stream(seqs: &[[u32; SEQ_LEN]]) -> String {
    let mut out = String::new();
    for s in seqs {
        let line: Vec<String> = s.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_token_stream(text: &str) -> Result<Vec<[u32; SEQ_LEN]>, CodecError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: &str| CodecError::TokenFile {
            line: i + 1,
            reason: reason.to_string(),
        };
        let ids: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad id")))
            .collect::<Result<_, _>>()?;
        let seq: [u32; SEQ_LEN] = ids.try_into().map_err(|_| bad("expected 8 ids"))?;
        if let Some(&t) = seq.iter().find(|&&t| t >= EXTENDED_VOCAB_SIZE) {
            return Err(bad(&format!("id {t} outside the vocabulary")));
        }
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(t1: u8, t2: u8) -> Timing {
        Timing {
            time1: t1,
            time2: t2,
            track: 0,
        }
    }

    #[test]
    fn vocabulary_arithmetic() {
        let sizes = [8, 128, 16, 128, 16, 128, 128, 2048, 128, 128, 128, 384, 16, 4, 15, 2, 1];
        assert_eq!(sizes.iter().sum::<u32>(), 3406);
        assert_eq!(Vocab::standard().size(), 3406);
        assert_eq!(Vocab::extended().size(), 3445);
        let v = Vocab::extended();
        for w in v.families.windows(2) {
            assert_eq!(w[0].1.end, w[1].1.start);
        }
        assert_eq!(v.family_of(PAD), Some(Family::Pad));
        assert_eq!(v.range(Family::Pad).unwrap(), Vocab::standard().range(Family::Pad).unwrap());
    }

    #[test]
    fn layouts() {
        let n = encode_event(&MidiEvent::Note {
            at: at(0, 0),
            channel: 0,
            pitch: 60,
            velocity: 100,
            duration: 16,
        })
        .unwrap();
        assert!(!n.contains(&PAD));
        assert_eq!(encode_event(&MidiEvent::Eos).unwrap(), [7, PAD, PAD, PAD, PAD, PAD, PAD, PAD]);
        let k = encode_event(&MidiEvent::KeySignature {
            at: at(1, 2),
            accidentals: -7,
            mode: 0,
        })
        .unwrap();
        // event 8 + time1 128 + time2 16 + track 128 + channel 16 + pitch 128 + velocity 128
        // + duration 2048 + program 128 + controller 128 + value 128 + bpm 384 + numer 16 + denom 4
        let acc_base = 8 + 128 + 16 + 128 + 16 + 128 + 128 + 2048 + 128 + 128 + 128 + 384 + 16 + 4;
        assert_eq!(k, [5, 8 + 1, 136 + 2, 152, acc_base, acc_base + 15, PAD, PAD]);
        assert_eq!(encode_event(&MidiEvent::ComposerPrompt(35)).unwrap(), [3444; 8]);
    }

    #[test]
    fn decode_errors() {
        let mut n = encode_event(&MidiEvent::Note {
            at: at(0, 0),
            channel: 0,
            pitch: 60,
            velocity: 100,
            duration: 16,
        })
        .unwrap();
        n[6] = n[5];
        assert!(matches!(
            decode_seq(&n),
            Err(CodecError::TokenFamilyMismatch { slot: 6, expected: Family::Velocity, .. })
        ));
        assert_eq!(decode_seq(&[PAD; 8]), Err(CodecError::BadEventType(PAD)));
        let mut e = encode_event(&MidiEvent::Bos).unwrap();
        e[3] = 9;
        assert_eq!(decode_seq(&e), Err(CodecError::BadPadding { slot: 3 }));
        assert!(matches!(
            encode_event(&MidiEvent::SetTempo { at: at(0, 0), bpm: 0 }),
            Err(CodecError::ParamOutOfRange { field: "bpm", .. })
        ));
    }

    #[test]
    fn timeline_beats() {
        let note = |tick| TimedEvent {
            tick,
            track: 0,
            kind: TimedKind::Note {
                channel: 0,
                pitch: 60,
                velocity: 90,
                duration_ticks: 480 * 129,
            },
        };
        let s = encode_timeline(&[note(0), note(720), note(720)], 480).unwrap();
        let e: Vec<MidiEvent> = s.iter().map(|x| decode_seq(x).unwrap()).collect();
        match (e[1], e[2]) {
            (MidiEvent::Note { at: a, duration, .. }, MidiEvent::Note { at: b, .. }) => {
                assert_eq!((a.time1, a.time2), (1, 8));
                assert_eq!((b.time1, b.time2), (0, 8));
                assert_eq!(duration, 2048);
            }
            _ => unreachable!(),
        }
        let s = encode_timeline(&[note(0), note(0)], 480).unwrap();
        assert!(matches!(decode_seq(&s[1]).unwrap(), MidiEvent::Note { at: Timing { time1: 0, time2: 0, .. }, .. }));
        assert_eq!(
            encode_timeline(&[note(10), note(5)], 480),
            Err(CodecError::NegativeDelta { index: 1 })
        );
    }

    #[test]
    fn stream_file_round_trip() {
        let seqs = frame_piece(Some(1), Some(4), &[]).unwrap();
        assert_eq!(read_token_stream(&write_token_stream(&seqs)).unwrap(), seqs);
        assert!(read_token_stream("1 2 3\n").is_err());
    }
}
