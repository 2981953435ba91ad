use std::collections::{HashMap, VecDeque};

use super::{CodecError, TimedEvent, TimedKind};

/// Tracks merged into one tick-ordered event list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmfFile {
    pub format: u16,
    pub ticks_per_beat: u64,
    pub events: Vec<TimedEvent>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn err(msg: &str) -> CodecError {
    CodecError::Smf(msg.to_string())
}

impl<'a> Cursor<'a> {
    fn byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.buf.get(self.pos).ok_or_else(|| err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| err("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn be(&mut self, n: usize) -> Result<u64, CodecError> {
        Ok(self.bytes(n)?.iter().fold(0, |acc, &b| acc << 8 | b as u64))
    }

    fn vlq(&mut self) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for _ in 0..4 {
            let b = self.byte()?;
            v = v << 7 | (b & 0x7f) as u64;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(err("variable-length quantity longer than 4 bytes"))
    }
}

fn read_track(data: &[u8], track: u8, out: &mut Vec<(u64, usize, TimedEvent)>) -> Result<(), CodecError> {
    let mut c = Cursor { buf: data, pos: 0 };
    let mut tick = 0u64;
    let mut status = 0u8;
    // (channel, pitch) -> onsets waiting for their note-off, with velocity
    // and their slot in `out`.
    let mut open: HashMap<(u8, u8), VecDeque<(u64, usize)>> = HashMap::new();
    let close = |out: &mut Vec<(u64, usize, TimedEvent)>, slot: usize, end: u64| {
        let start = out[slot].0;
        if let TimedKind::Note { ref mut duration_ticks, .. } = out[slot].2.kind {
            *duration_ticks = end - start;
        }
    };
    while c.pos < data.len() {
        tick += c.vlq()?;
        let mut b = c.byte()?;
        if b < 0x80 {
            if status == 0 {
                return Err(err("running status without a status byte"));
            }
            c.pos -= 1;
            b = status;
        }
        match b {
            0xff => {
                let kind = c.byte()?;
                let len = c.vlq()? as usize;
                let body = c.bytes(len)?;
                let ev = match (kind, body) {
                    (0x2f, _) => break,
                    (0x51, [a, b2, c2]) => {
                        let us = (*a as u64) << 16 | (*b2 as u64) << 8 | *c2 as u64;
                        let bpm = if us == 0 { 384 } else { ((60_000_000 + us / 2) / us).clamp(1, 384) };
                        Some(TimedKind::SetTempo { bpm: bpm as u16 })
                    }
                    (0x58, [n, d, ..]) if *d < 8 => Some(TimedKind::TimeSignature {
                        numerator: *n,
                        denominator: 1u8 << d,
                    }),
                    (0x59, [sf, mi]) => Some(TimedKind::KeySignature {
                        accidentals: *sf as i8,
                        mode: *mi,
                    }),
                    _ => None,
                };
                if let Some(kind) = ev {
                    out.push((tick, out.len(), TimedEvent { tick, track, kind }));
                }
            }
            0xf0 | 0xf7 => {
                let len = c.vlq()? as usize;
                c.bytes(len)?;
            }
            0x80..=0xef => {
                status = b;
                let ch = b & 0x0f;
                match b & 0xf0 {
                    0x80 | 0x90 => {
                        let pitch = c.byte()? & 0x7f;
                        let vel = c.byte()? & 0x7f;
                        if b & 0xf0 == 0x90 && vel > 0 {
                            let slot = out.len();
                            out.push((
                                tick,
                                slot,
                                TimedEvent {
                                    tick,
                                    track,
                                    kind: TimedKind::Note {
                                        channel: ch,
                                        pitch,
                                        velocity: vel,
                                        duration_ticks: 0,
                                    },
                                },
                            ));
                            open.entry((ch, pitch)).or_default().push_back((tick, slot));
                        } else if let Some((_, slot)) = open.get_mut(&(ch, pitch)).and_then(VecDeque::pop_front) {
                            close(out, slot, tick);
                        }
                    }
                    0xb0 => {
                        let controller = c.byte()? & 0x7f;
                        let value = c.byte()? & 0x7f;
                        out.push((
                            tick,
                            out.len(),
                            TimedEvent {
                                tick,
                                track,
                                kind: TimedKind::ControlChange {
                                    channel: ch,
                                    controller,
                                    value,
                                },
                            },
                        ));
                    }
                    0xc0 => {
                        let program = c.byte()? & 0x7f;
                        out.push((
                            tick,
                            out.len(),
                            TimedEvent {
                                tick,
                                track,
                                kind: TimedKind::ProgramChange { channel: ch, program },
                            },
                        ));
                    }
                    0xd0 => {
                        c.byte()?;
                    }
                    _ => {
                        c.bytes(2)?;
                    }
                }
            }
            _ => return Err(err(&format!("unsupported status byte {b:#04x}"))),
        }
    }
    for q in open.into_values() {
        for (_, slot) in q {
            close(out, slot, tick);
        }
    }
    Ok(())
}

/// Reads format 0 or 1 files with a ticks-per-beat time base. Note-on and
/// note-off pairs (first in, first out per channel and pitch) become notes
/// with durations; notes still sounding at the end of a track end there.
pub fn read_smf(buf: &[u8]) -> Result<SmfFile, CodecError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.bytes(4)? != b"MThd" {
        return Err(err("missing MThd header"));
    }
    let len = c.be(4)? as usize;
    if len < 6 {
        return Err(err("short header chunk"));
    }
    let format = c.be(2)? as u16;
    let tracks = c.be(2)? as usize;
    let division = c.be(2)?;
    c.bytes(len - 6)?;
    if format > 1 {
        return Err(err(&format!("format {format} not supported")));
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(err("SMPTE time base not supported"));
    }
    let mut raw = Vec::new();
    let mut seen = 0;
    while seen < tracks && c.pos < buf.len() {
        let id = c.bytes(4)?;
        let len = c.be(4)? as usize;
        let data = c.bytes(len)?;
        if id == b"MTrk" {
            if seen > 127 {
                return Err(err("more than 128 tracks"));
            }
            read_track(data, seen as u8, &mut raw)?;
            seen += 1;
        }
    }
    raw.sort_by_key(|&(tick, order, ev)| (tick, ev.track, order));
    Ok(SmfFile {
        format,
        ticks_per_beat: division,
        events: raw.into_iter().map(|(_, _, e)| e).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vlq(mut v: u32) -> Vec<u8> {
        let mut out = vec![(v & 0x7f) as u8];
        v >>= 7;
        while v > 0 {
            out.push((v & 0x7f) as u8 | 0x80);
            v >>= 7;
        }
        out.reverse();
        out
    }

    fn file(tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut f = b"MThd".to_vec();
        f.extend([0, 0, 0, 6, 0, 1, 0, tracks.len() as u8, 0x01, 0xe0]);
        for t in tracks {
            f.extend(b"MTrk");
            f.extend((t.len() as u32).to_be_bytes());
            f.extend(t);
        }
        f
    }

    #[test]
    fn notes_and_meta() {
        let mut t = Vec::new();
        t.extend(vlq(0));
        t.extend([0xff, 0x51, 3, 0x07, 0xa1, 0x20]); // 500000 us = 120 bpm
        t.extend(vlq(0));
        t.extend([0x90, 60, 100]);
        t.extend(vlq(240));
        t.extend([64, 90]); // running status
        t.extend(vlq(240));
        t.extend([0x80, 60, 0]);
        t.extend(vlq(480));
        t.extend([0x90, 64, 0]);
        t.extend(vlq(0));
        t.extend([0xff, 0x2f, 0]);
        let s = read_smf(&file(&[t])).unwrap();
        assert_eq!(s.ticks_per_beat, 480);
        assert_eq!(s.events[0].kind, TimedKind::SetTempo { bpm: 120 });
        assert_eq!(
            s.events[1].kind,
            TimedKind::Note {
                channel: 0,
                pitch: 60,
                velocity: 100,
                duration_ticks: 480
            }
        );
        assert_eq!(s.events[2].tick, 240);
        assert_eq!(
            s.events[2].kind,
            TimedKind::Note {
                channel: 0,
                pitch: 64,
                velocity: 90,
                duration_ticks: 720
            }
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_smf(b"RIFF....").is_err());
        let mut f = file(&[]);
        f[9] = 2;
        assert!(read_smf(&f).is_err());
    }
}
