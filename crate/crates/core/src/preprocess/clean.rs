use std::collections::HashSet;

use crate::abc::{Sheet, Token};

const DEFAULT_TERMS: &[&str] = &[
    // tempo
    "grave", "largo", "larghetto", "lento", "adagio", "adagietto", "andante", "andantino",
    "moderato", "allegretto", "allegro", "vivace", "vivo", "presto", "prestissimo", "rit.",
    "ritardando", "rall.", "rallentando", "accel.", "accelerando", "a", "tempo", "primo",
    "rubato", "stringendo", "allargando", "meno", "più", "piu", "mosso",
    // dynamics
    "ppp", "pp", "p", "mp", "mf", "f", "ff", "fff", "sf", "sfz", "fp", "cresc.", "crescendo",
    "dim.", "diminuendo", "decresc.", "decrescendo",
    // expression
    "dolce", "cantabile", "espressivo", "espr.", "legato", "staccato", "marcato", "sostenuto",
    "maestoso", "agitato", "grazioso", "scherzando", "tranquillo", "leggiero", "pesante",
    "sempre", "molto", "poco", "sotto", "voce", "tenuto", "con", "brio", "moto", "ma", "non",
    "troppo", "assai", "e", "sostenuto", "animato", "appassionato", "calando", "smorzando",
];

/// Terms that may survive in free-text fields and text annotations. A text is
/// kept only when every word of it is a listed term.
#[derive(Clone, Debug)]
pub struct TextWhitelist {
    terms: HashSet<String>,
}

impl Default for TextWhitelist {
    fn default() -> Self {
        Self::from_terms(DEFAULT_TERMS.iter().copied())
    }
}

impl TextWhitelist {
    pub fn from_terms<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        TextWhitelist {
            terms: terms.into_iter().map(|t| t.to_lowercase()).collect(),
        }
    }

    pub fn allows(&self, text: &str) -> bool {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| c == ',' || c == ';' || c == '!').to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        !words.is_empty() && words.iter().all(|w| self.terms.contains(w))
    }
}

/// Letters of free-text information fields.
const FREE_TEXT_FIELDS: &[char] = &['A', 'B', 'C', 'D', 'F', 'G', 'H', 'N', 'O', 'R', 'S', 'T', 'W', 'Z'];

fn clean_tokens(tokens: &mut Vec<Token>, wl: &TextWhitelist) {
    tokens.retain(|t| match t {
        Token::Annotation(a) => {
            let inner = a.trim_matches('"');
            match inner.chars().next() {
                // Placed text: keep only whitelisted expression/tempo terms.
                Some('^' | '_' | '<' | '>' | '@') => wl.allows(&inner[1..]),
                // Chord symbols are musical content.
                _ => true,
            }
        }
        _ => true,
    });
    for t in tokens.iter_mut() {
        if let Token::Chord { inner, .. } = t {
            clean_tokens(inner, wl);
        }
    }
}

/// Drops lyrics, non-whitelisted free-text fields and placed text annotations.
/// Tempo (`Q:`), decorations and chord symbols are kept.
pub fn clean_text_annotations(sheet: &Sheet, whitelist: &TextWhitelist) -> Sheet {
    let mut out = sheet.clone();
    out.lyrics.clear();
    out.header
        .extra_fields
        .retain(|(f, v)| !FREE_TEXT_FIELDS.contains(f) || whitelist.allows(v));
    for v in &mut out.voices {
        for b in &mut v.bars {
            let before = b.tokens.len();
            clean_tokens(&mut b.tokens, whitelist);
            if b.tokens.len() != before {
                b.rebuild_raw();
            }
        }
    }
    out
}
