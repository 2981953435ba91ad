use super::token::{lex_line, Token};
use super::{
    AbcError, Bar, Duration, KeySignature, Layout, Meter, Sheet, TuneHeader, VoiceBody, VoiceDecl,
};

fn field_line(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    let f = chars.next()?;
    if f.is_ascii_alphabetic() && chars.next() == Some(':') {
        Some((f, &line[2..]))
    } else {
        None
    }
}

fn parse_unit_length(value: &str) -> Option<Duration> {
    let (n, d) = value.trim().split_once('/')?;
    let d = Duration::new(n.trim().parse().ok()?, d.trim().parse().ok()?)?;
    (!d.is_zero()).then_some(d)
}

/// Assigns `%%score` groups: each bracketed group or lone voice id is one group.
fn apply_score_groups(directive: &str, voices: &mut [VoiceDecl]) {
    let mut depth = 0usize;
    let mut group = 0usize;
    let mut word = String::new();
    let assign = |word: &mut String, group: usize, voices: &mut [VoiceDecl]| {
        if !word.is_empty() {
            if let Some(v) = voices.iter_mut().find(|v| v.id == *word) {
                v.stave_group = Some(group);
            }
            word.clear();
        }
    };
    for c in directive.chars() {
        match c {
            '{' | '(' | '[' => {
                assign(&mut word, group, voices);
                depth += 1;
            }
            '}' | ')' | ']' => {
                assign(&mut word, group, voices);
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    group += 1;
                }
            }
            c if c.is_whitespace() || c == '|' => {
                let had = !word.is_empty();
                assign(&mut word, group, voices);
                if had && depth == 0 {
                    group += 1;
                }
            }
            c => word.push(c),
        }
    }
    assign(&mut word, group, voices);
}

struct BodyBuilder {
    header: TuneHeader,
    voices: Vec<VoiceBody>,
    lyrics: Vec<(String, String)>,
    current: Option<usize>,
    interleaved: bool,
}

impl BodyBuilder {
    fn voice_index(&mut self, id: &str, properties: &str) -> usize {
        if let Some(i) = self.voices.iter().position(|v| v.id == id) {
            return i;
        }
        self.header
            .voice_declarations
            .push(VoiceDecl::new(id, properties, false));
        self.voices.push(VoiceBody {
            id: id.to_string(),
            bars: Vec::new(),
        });
        self.voices.len() - 1
    }

    fn current_voice(&mut self) -> usize {
        match self.current {
            Some(i) => i,
            None => {
                let i = if self.voices.is_empty() {
                    self.voice_index("1", "")
                } else {
                    0
                };
                self.current = Some(i);
                i
            }
        }
    }

    fn music_line(&mut self, line: &str, line_no: usize, terminated: bool) -> Result<(), AbcError> {
        let tokens = lex_line(line, line_no)?;
        let mut iter = tokens.into_iter().peekable();
        let mut label: Option<String> = None;
        while let Some(Token::InlineField { field: 'r', .. }) = iter.peek() {
            let t = iter.next().unwrap();
            label.get_or_insert_with(String::new).push_str(&t.to_string());
        }
        let mut pending: Vec<Token> = Vec::new();
        let mut last_bar: Option<(usize, usize)> = None;
        let mut first = true;
        let flush = |this: &mut Self,
                         pending: &mut Vec<Token>,
                         label: &mut Option<String>,
                         last_bar: &mut Option<(usize, usize)>,
                         first: &mut bool| {
            let v = this.current_voice();
            let id = this.voices[v].id.clone();
            let mut bar = Bar::from_tokens(&id, std::mem::take(pending));
            if *first {
                bar.line_label = label.take();
                *first = false;
            }
            this.voices[v].bars.push(bar);
            *last_bar = Some((v, this.voices[v].bars.len() - 1));
        };
        for t in iter.by_ref() {
            match t {
                Token::InlineField { field: 'V', ref value } => {
                    if pending.iter().any(|t| !matches!(t, Token::Space(_))) {
                        flush(self, &mut pending, &mut label, &mut last_bar, &mut first);
                    } else if let Some((v, b)) = last_bar {
                        let bar = &mut self.voices[v].bars[b];
                        bar.tokens.append(&mut pending);
                        bar.rebuild_raw();
                    }
                    pending.clear();
                    let id = value.split_whitespace().next().unwrap_or("").to_string();
                    let i = self.voice_index(&id, "");
                    self.current = Some(i);
                    self.interleaved = true;
                }
                Token::Barline(_) => {
                    let has_content = pending
                        .iter()
                        .any(|t| !matches!(t, Token::Space(_) | Token::Barline(_)));
                    pending.push(t);
                    if has_content {
                        flush(self, &mut pending, &mut label, &mut last_bar, &mut first);
                    }
                }
                t => pending.push(t),
            }
        }
        let has_content = pending.iter().any(|t| !matches!(t, Token::Space(_)));
        let only_spaces_or_bars = pending
            .iter()
            .all(|t| matches!(t, Token::Space(_) | Token::Barline(_)));
        if !pending.is_empty() {
            match last_bar {
                Some((v, b)) if only_spaces_or_bars && Some(v) == self.current => {
                    let bar = &mut self.voices[v].bars[b];
                    bar.tokens.append(&mut pending);
                    bar.rebuild_raw();
                }
                _ if has_content => {
                    flush(self, &mut pending, &mut label, &mut last_bar, &mut first)
                }
                _ => {}
            }
        }
        if let Some((v, b)) = last_bar {
            self.voices[v].bars[b].ends_line = terminated;
        }
        Ok(())
    }
}

/// Parses one tune. Lines before `K:` form the header; everything after is body.
pub fn parse_sheet(text: &str) -> Result<Sheet, AbcError> {
    let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut reference: Option<u32> = None;
    let mut key: Option<KeySignature> = None;
    let mut unit = None;
    let mut meter = None;
    let mut tempo = None;
    let mut voices: Vec<VoiceDecl> = Vec::new();
    let mut score = None;
    let mut extra = Vec::new();
    let mut directives = Vec::new();
    let mut idx = 0;
    while idx < lines.len() {
        let line = lines[idx];
        idx += 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(d) = line.strip_prefix("%%") {
            match d.strip_prefix("score") {
                Some(rest) if rest.is_empty() || rest.starts_with(char::is_whitespace) => {
                    score = Some(rest.trim().to_string())
                }
                _ => directives.push(d.to_string()),
            }
            continue;
        }
        if line.starts_with('%') {
            continue;
        }
        let Some((field, value)) = field_line(line) else {
            // Music before K: is not part of this dialect.
            return Err(AbcError::MissingHeaderField('K'));
        };
        match field {
            'X' => {
                reference = Some(value.trim().parse().map_err(|_| AbcError::BadHeaderField {
                    field,
                    value: value.to_string(),
                })?)
            }
            'L' => {
                unit = Some(parse_unit_length(value).ok_or_else(|| AbcError::BadHeaderField {
                    field,
                    value: value.to_string(),
                })?)
            }
            'M' => {
                meter = Some(Meter::parse(value).ok_or_else(|| AbcError::BadHeaderField {
                    field,
                    value: value.to_string(),
                })?)
            }
            'Q' => tempo = Some(value.to_string()),
            'V' => {
                let v = value.trim_start();
                let id_len = v.find(char::is_whitespace).unwrap_or(v.len());
                let id = &v[..id_len];
                if id.is_empty() {
                    return Err(AbcError::BadHeaderField {
                        field,
                        value: value.to_string(),
                    });
                }
                if voices.iter().any(|d| d.id == id) {
                    return Err(AbcError::DuplicateVoice(id.to_string()));
                }
                voices.push(VoiceDecl::new(id, &v[id_len..], true));
            }
            'K' => {
                key = Some(KeySignature::parse(value)?);
                break;
            }
            f => extra.push((f, value.to_string())),
        }
    }
    let reference = reference.ok_or(AbcError::MissingHeaderField('X'))?;
    let key = key.ok_or(AbcError::MissingHeaderField('K'))?;
    let header = TuneHeader {
        reference_number: reference,
        unit_note_length: unit,
        meter,
        key,
        tempo,
        voice_declarations: voices,
        score_directive: score,
        extra_fields: extra,
        directives,
    };
    let bodies = header
        .voice_declarations
        .iter()
        .map(|v| VoiceBody {
            id: v.id.clone(),
            bars: Vec::new(),
        })
        .collect();
    let mut b = BodyBuilder {
        header,
        voices: bodies,
        lyrics: Vec::new(),
        current: None,
        interleaved: false,
    };
    while idx < lines.len() {
        let line = lines[idx];
        idx += 1;
        let line_no = idx;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(d) = line.strip_prefix("%%") {
            match d.strip_prefix("score") {
                Some(rest) if rest.is_empty() || rest.starts_with(char::is_whitespace) => {
                    b.header.score_directive = Some(rest.trim().to_string())
                }
                _ => b.header.directives.push(d.to_string()),
            }
            continue;
        }
        if line.starts_with('%') {
            continue;
        }
        if let Some((field, value)) = field_line(line) {
            match field {
                'V' => {
                    let v = value.trim_start();
                    let id_len = v.find(char::is_whitespace).unwrap_or(v.len());
                    let i = b.voice_index(&v[..id_len], &v[id_len..]);
                    b.current = Some(i);
                }
                'w' | 'W' => {
                    let v = b.current_voice();
                    let id = b.voices[v].id.clone();
                    b.lyrics.push((id, value.to_string()));
                }
                'M' | 'K' | 'L' | 'Q' => {
                    // Body field lines become inline fields on a bar of their own line.
                    b.music_line(&format!("[{field}:{value}]"), line_no, true)?;
                }
                f => b.header.extra_fields.push((f, value.to_string())),
            }
            continue;
        }
        b.music_line(line, line_no, idx < lines.len())?;
    }
    if let Some(s) = b.header.score_directive.clone() {
        apply_score_groups(&s, &mut b.header.voice_declarations);
    }
    let layout = if b.interleaved {
        for v in &mut b.voices {
            for bar in &mut v.bars {
                bar.ends_line = false;
            }
        }
        Layout::Interleaved
    } else {
        Layout::PerVoice
    };
    Ok(Sheet {
        header: b.header,
        voices: b.voices,
        layout,
        lyrics: b.lyrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sheet() {
        let s = parse_sheet("X:1\nL:1/8\nM:2/4\nK:C\nV:1\nCDEF|GABc|").unwrap();
        assert_eq!(s.voices.len(), 1);
        assert_eq!(s.voices[0].bars.len(), 2);
        assert_eq!(s.header.unit_note_length, Duration::new(1, 8));
        assert_eq!(s.header.meter, Meter::parse("2/4"));
        assert_eq!(s.voices[0].bars[1].raw_text, "GABc|");
    }

    #[test]
    fn empty_body() {
        let s = parse_sheet("X:1\nK:C\nV:1\n").unwrap();
        assert_eq!(s.voices.len(), 1);
        assert_eq!(s.bar_count(), 0);
        assert_eq!(s.header.unit_length(), Duration::new(1, 8).unwrap());
    }

    #[test]
    fn missing_fields() {
        assert_eq!(
            parse_sheet("X:1\nL:1/8\n"),
            Err(AbcError::MissingHeaderField('K'))
        );
        assert_eq!(parse_sheet("K:C\nCD|"), Err(AbcError::MissingHeaderField('X')));
    }

    #[test]
    fn unbalanced_chord() {
        assert!(matches!(
            parse_sheet("X:1\nK:C\n[CEG|"),
            Err(AbcError::UnbalancedBarline { .. })
        ));
    }

    #[test]
    fn score_groups() {
        let text = "X:1\n%%score {1 2} 3\nV:1 name=\"Violin\"\nV:2 name=\"Violin\"\nV:3 name=\"Cello\"\nK:C\n";
        let s = parse_sheet(text).unwrap();
        let groups: Vec<_> = s
            .header
            .voice_declarations
            .iter()
            .map(|v| v.stave_group)
            .collect();
        assert_eq!(groups, [Some(0), Some(0), Some(1)]);
        assert_eq!(
            s.header.voice_declarations[2].instrument_name.as_deref(),
            Some("Cello")
        );
    }

    #[test]
    fn interleaved_lines_with_labels() {
        let text = "X:1\nL:1/8\nM:2/4\nK:C\n[r:1/1][V:1]CDEF|[V:2]z4|\n[r:2/0][V:1]GABc|[V:2]C4|\n";
        let s = parse_sheet(text).unwrap();
        assert_eq!(s.layout, Layout::Interleaved);
        assert_eq!(s.voices.len(), 2);
        assert_eq!(s.voices[1].bars[1].raw_text, "C4|");
        assert_eq!(s.voices[0].bars[0].line_label.as_deref(), Some("[r:1/1]"));
        assert_eq!(s.voices[1].bars[0].line_label, None);
    }

    #[test]
    fn leading_barline_joins_next_bar() {
        let s = parse_sheet("X:1\nK:C\n|:CD EF:|\n").unwrap();
        assert_eq!(s.voices[0].bars.len(), 1);
        assert_eq!(s.voices[0].bars[0].raw_text, "|:CD EF:|");
    }

    #[test]
    fn body_field_lines_and_lyrics() {
        let s = parse_sheet("X:1\nT:Air\nK:C\nCD|\nw: la la\nM:3/4\nCDE|\n").unwrap();
        assert_eq!(s.lyrics, [("1".to_string(), " la la".to_string())]);
        assert_eq!(s.voices[0].bars.len(), 3);
        assert!(s.voices[0].bars[1].meter_change().is_some());
        assert_eq!(s.header.extra_fields, [('T', "Air".to_string())]);
    }

    #[test]
    fn prompt_directive_precedes_header() {
        let s = parse_sheet("%%prompt Baroque|Bach, Johann Sebastian|Keyboard\nX:1\nK:C\nC|\n").unwrap();
        assert_eq!(
            s.header.directives,
            ["prompt Baroque|Bach, Johann Sebastian|Keyboard"]
        );
    }
}
