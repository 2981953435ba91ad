//! Synthetic corpora with known statistics: a two-prompt corpus whose
//! prompts favour two separable styles, and pieces with a fixed share of
//! all-rest measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::preprocess::{Instrumentation, Period, Prompt};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Style {
    /// 4/4 running eighths on a pentatonic scale.
    Pentatonic,
    /// 3/4 quarter notes on a sharp-heavy pitch set.
    Sustained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPiece {
    pub id: String,
    pub prompt: Prompt,
    pub style: Style,
    /// Raw single-voice ABC, not yet preprocessed.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub pieces_per_prompt: usize,
    /// Share of a prompt's pieces written in its own style.
    pub purity: f64,
    pub min_bars: usize,
    pub max_bars: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pieces_per_prompt: 200,
            purity: 0.75,
            min_bars: 6,
            max_bars: 10,
            seed: 0,
        }
    }
}

/// The two prompts and their home styles.
pub fn two_style_prompts() -> [(Prompt, Style); 2] {
    [
        (Prompt::new(Period::Baroque, "Alpha", Instrumentation::Keyboard), Style::Pentatonic),
        (Prompt::new(Period::Romantic, "Beta", Instrumentation::Keyboard), Style::Sustained),
    ]
}

const PENTA: [&str; 8] = ["C", "D", "E", "G", "A", "c", "d", "e"];
const SHARP: [&str; 6] = ["F", "B", "^c", "^d", "^g", "b"];

fn bar<R: Rng + ?Sized>(style: Style, pos: &mut usize, rng: &mut R) -> String {
    let mut out = String::new();
    match style {
        Style::Pentatonic => {
            for i in 0..8 {
                let step: i32 = [-2, -1, 1, 2][rng.gen_range(0..4)];
                *pos = (*pos as i32 + step).clamp(0, PENTA.len() as i32 - 1) as usize;
                out.push_str(PENTA[*pos]);
                if i == 3 {
                    out.push(' ');
                }
            }
        }
        Style::Sustained => {
            for _ in 0..3 {
                *pos = rng.gen_range(0..SHARP.len());
                out.push_str(SHARP[*pos]);
            }
        }
    }
    out.push('|');
    out
}

/// One raw piece of `bars` bars.
pub fn style_piece<R: Rng + ?Sized>(style: Style, bars: usize, rng: &mut R) -> String {
    let (unit, meter) = match style {
        Style::Pentatonic => ("1/8", "4/4"),
        Style::Sustained => ("1/4", "3/4"),
    };
    let mut text = format!("X:1\nL:{unit}\nM:{meter}\nK:C\n");
    let mut pos = rng.gen_range(0..4);
    for i in 0..bars {
        text.push_str(&bar(style, &mut pos, rng));
        if i % 4 == 3 || i + 1 == bars {
            text.push('\n');
        }
    }
    text
}

/// Each prompt gets `pieces_per_prompt` pieces, a `purity` share of them in
/// its home style and the rest in the other prompt's style.
pub fn two_style_corpus(cfg: &SynthConfig) -> Vec<SynthPiece> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prompts = two_style_prompts();
    let mut out = Vec::new();
    for (pi, (prompt, home)) in prompts.iter().enumerate() {
        let other = prompts[1 - pi].1;
        let own = (cfg.purity * cfg.pieces_per_prompt as f64).round() as usize;
        for i in 0..cfg.pieces_per_prompt {
            let style = if i < own { *home } else { other };
            let bars = rng.gen_range(cfg.min_bars..=cfg.max_bars);
            out.push(SynthPiece {
                id: format!("p{pi}-{i:04}"),
                prompt: prompt.clone(),
                style,
                text: style_piece(style, bars, &mut rng),
            });
        }
    }
    out
}

/// Two-voice 4/4 pieces in which exactly `rest_share` of the measures rest in
/// both voices. Every bar fragment has the same character length, so the
/// body shrinks by that share when rest measures are removed.
pub fn rest_bar_piece<R: Rng + ?Sized>(measures: usize, rest_share: f64, rng: &mut R) -> String {
    let rests = (rest_share * measures as f64).round() as usize;
    let mut is_rest = vec![false; measures];
    for slot in rand::seq::index::sample(rng, measures, rests) {
        is_rest[slot] = true;
    }
    let mut voices = [String::new(), String::new()];
    let mut pos = 2;
    for &r in &is_rest {
        for v in &mut voices {
            if r {
                v.push_str("z2z2 z2z2|");
            } else {
                v.push_str(&bar(Style::Pentatonic, &mut pos, rng));
            }
        }
    }
    format!("X:1\nL:1/8\nM:4/4\nV:1\nV:2\nK:C\nV:1\n{}\nV:2\n{}\n", voices[0], voices[1])
}
