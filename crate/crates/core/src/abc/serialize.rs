use std::fmt::Write;

use super::{Layout, Sheet, TuneHeader};

/// Header lines in canonical order, each terminated by a newline.
pub fn serialize_header(h: &TuneHeader) -> String {
    let mut out = String::new();
    for d in &h.directives {
        let _ = writeln!(out, "%%{d}");
    }
    let _ = writeln!(out, "X:{}", h.reference_number);
    for (f, v) in &h.extra_fields {
        let _ = writeln!(out, "{f}:{v}");
    }
    if let Some(s) = &h.score_directive {
        let _ = writeln!(out, "%%score {s}");
    }
    if let Some(l) = h.unit_note_length {
        let _ = writeln!(out, "L:{l}");
    }
    if let Some(m) = h.meter {
        let _ = writeln!(out, "M:{m}");
    }
    if let Some(q) = &h.tempo {
        let _ = writeln!(out, "Q:{q}");
    }
    for v in h.voice_declarations.iter().filter(|v| v.in_header) {
        let _ = writeln!(out, "V:{}{}", v.id, v.properties);
    }
    let _ = writeln!(out, "K:{}", h.key);
    out
}

/// Canonical text of a sheet. `parse_sheet` of the result yields the same value.
pub fn serialize_sheet(sheet: &Sheet) -> String {
    let mut out = serialize_header(&sheet.header);
    match sheet.layout {
        Layout::PerVoice => {
            for voice in &sheet.voices {
                let in_header = sheet
                    .header
                    .voice(&voice.id)
                    .map(|d| d.in_header)
                    .unwrap_or(false);
                let lyrics: Vec<_> = sheet.lyrics.iter().filter(|(v, _)| *v == voice.id).collect();
                if voice.bars.is_empty() && lyrics.is_empty() && in_header {
                    continue;
                }
                if !out.ends_with('\n') {
                    out.push('\n');
                }
                let _ = writeln!(out, "V:{}", voice.id);
                let mut line_start = true;
                for bar in &voice.bars {
                    if line_start {
                        if let Some(l) = &bar.line_label {
                            out.push_str(l);
                        }
                    }
                    out.push_str(&bar.raw_text);
                    line_start = bar.ends_line;
                    if bar.ends_line {
                        out.push('\n');
                    }
                }
                for (_, text) in lyrics {
                    if !out.ends_with('\n') {
                        out.push('\n');
                    }
                    let _ = writeln!(out, "w:{text}");
                }
            }
        }
        Layout::Interleaved => {
            for k in 0..sheet.bar_count() {
                let measure = sheet.measure(k);
                if let Some(l) = measure.iter().find_map(|b| b.line_label.as_ref()) {
                    out.push_str(l);
                }
                for bar in measure {
                    let _ = write!(out, "[V:{}]{}", bar.voice_id, bar.raw_text);
                }
                out.push('\n');
            }
            for (v, text) in &sheet.lyrics {
                let _ = writeln!(out, "V:{v}");
                let _ = writeln!(out, "w:{text}");
            }
        }
    }
    out
}
