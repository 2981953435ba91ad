//! Objective metrics: average score, label accuracy, bar alignment error and
//! perplexity.

mod classifier;

use std::fmt::Write as _;

use thiserror::Error;

use crate::abc::{bar_duration, parse_sheet, Bar, Duration, Meter, Sheet, Token};
use crate::evaluator::{ScoredPiece, SemanticFeature};
use crate::model::{ModelError, Policy, ScoredSeq};
use crate::preprocess::Prompt;

pub use classifier::{label_accuracy, stratified_split, train_label_classifier, ClassifierConfig, LinearClassifier};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("metric report line {line}: {reason}")]
    BadReport { line: usize, reason: String },
}

/// Average score.
pub fn acs(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BaeCounts {
    pub misaligned: usize,
    pub total: usize,
    pub unparseable_sheets: usize,
}

impl BaeCounts {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.misaligned as f64 / self.total as f64
        }
    }

    fn add(&mut self, o: BaeCounts) {
        self.misaligned += o.misaligned;
        self.total += o.total;
        self.unparseable_sheets += o.unparseable_sheets;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BarVerdict {
    Skip,
    Exempt,
    Aligned,
    Misaligned,
}

fn is_field_only(bar: &Bar) -> bool {
    !bar.has_events()
        && bar
            .tokens
            .iter()
            .any(|t| matches!(t, Token::InlineField { field, .. } if *field != 'r' && *field != 'V'))
}

fn unit_change(bar: &Bar) -> Option<Duration> {
    bar.tokens.iter().rev().find_map(|t| match t {
        Token::InlineField { field: 'L', value } => {
            let (n, d) = value.trim().split_once('/')?;
            Duration::new(n.trim().parse().ok()?, d.trim().parse().ok()?)
        }
        _ => None,
    })
}

fn voice_verdicts(sheet: &Sheet, bars: &[Bar]) -> Vec<BarVerdict> {
    let mut meter = sheet.header.meter.clone();
    let mut unit = sheet.header.unit_length();
    let mut changed = false;
    let mut first = true;
    bars.iter()
        .map(|bar| {
            if let Some(m) = bar.meter_change() {
                meter = Some(m);
                changed = true;
            }
            if let Some(u) = unit_change(bar) {
                unit = u;
            }
            if is_field_only(bar) {
                return BarVerdict::Skip;
            }
            let was_first = std::mem::replace(&mut first, false);
            if std::mem::replace(&mut changed, false) {
                return BarVerdict::Exempt;
            }
            let Some(expected) = meter.as_ref().and_then(Meter::bar_length) else {
                return BarVerdict::Aligned;
            };
            let found = bar_duration(bar, unit);
            if found == expected {
                BarVerdict::Aligned
            } else if was_first && found.ratio() < expected.ratio() {
                BarVerdict::Exempt
            } else {
                BarVerdict::Misaligned
            }
        })
        .collect()
}

/// Bar counts of one parsed sheet. A measure counts once; it is misaligned
/// when any voice fragment in it is.
pub fn sheet_alignment(sheet: &Sheet) -> BaeCounts {
    let per_voice: Vec<Vec<BarVerdict>> = sheet
        .voices
        .iter()
        .map(|v| voice_verdicts(sheet, &v.bars).into_iter().filter(|&b| b != BarVerdict::Skip).collect())
        .collect();
    let n = per_voice.iter().map(Vec::len).max().unwrap_or(0);
    let mut c = BaeCounts::default();
    for k in 0..n {
        let verdicts: Vec<BarVerdict> = per_voice.iter().filter_map(|v| v.get(k).copied()).collect();
        if verdicts.iter().all(|&v| v == BarVerdict::Exempt) {
            continue;
        }
        c.total += 1;
        if verdicts.contains(&BarVerdict::Misaligned) {
            c.misaligned += 1;
        }
    }
    c
}

/// Barline groups in the body, used as the bar count of a sheet that does not
/// parse (at least one).
fn rough_bar_count(text: &str) -> usize {
    let mut in_body = false;
    let mut n = 0;
    for line in text.lines() {
        if !in_body {
            in_body = line.starts_with("K:");
            continue;
        }
        let b = line.as_bytes();
        if b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':' || line.starts_with('%') {
            continue;
        }
        let mut prev = false;
        for &ch in b {
            let bar = ch == b'|';
            if bar && !prev {
                n += 1;
            }
            prev = bar;
        }
    }
    n.max(1)
}

/// Fraction of bars whose length differs from the prevailing meter. First-bar
/// pickups and the bar where a meter change takes effect are exempt; sheets
/// without a meter have no misaligned bars; unparseable sheets count every
/// bar as misaligned.
pub fn bar_alignment_error<S: AsRef<str>>(sheets: &[S]) -> BaeCounts {
    let mut c = BaeCounts::default();
    for s in sheets {
        match parse_sheet(s.as_ref()) {
            Ok(sheet) => c.add(sheet_alignment(&sheet)),
            Err(_) => {
                let n = rough_bar_count(s.as_ref());
                c.add(BaeCounts {
                    misaligned: n,
                    total: n,
                    unparseable_sheets: 1,
                });
            }
        }
    }
    c
}

/// `exp` of the mean per-character NLL, with the same scored positions as
/// training: content characters plus each patch's end marker.
pub fn perplexity(policy: &Policy, corpus: &[ScoredSeq]) -> Result<f64, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(policy.nll_loss(corpus)?.exp())
}

/// Period and instrumentation classifiers fit on ground-truth features.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelModels {
    pub period: LinearClassifier,
    pub instrumentation: LinearClassifier,
    /// Held-out accuracy on the ground truth, `(period, instrumentation)`.
    pub holdout: (f64, f64),
}

fn fit_one(
    feats: &[SemanticFeature],
    labels: &[String],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(LinearClassifier, f64), MetricsError> {
    let dim = feats.first().ok_or(MetricsError::EmptyInput)?.dim();
    let mut classes = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() == 1 {
        return Ok((LinearClassifier::constant(&classes[0], dim), 1.0));
    }
    let (train, test) = stratified_split(labels, 0.2, seed);
    let pick = |idx: &[usize]| -> (Vec<SemanticFeature>, Vec<String>) {
        (idx.iter().map(|&i| feats[i].clone()).collect(), idx.iter().map(|&i| labels[i].clone()).collect())
    };
    let (tf, tl) = pick(&train);
    let clf = train_label_classifier(&tf, &tl, cfg)?;
    let (hf, hl) = pick(&test);
    let acc = if hf.is_empty() { f64::NAN } else { label_accuracy(&clf, &hf, &hl)? };
    Ok((clf, acc))
}

impl LabelModels {
    /// Fits both classifiers on a seeded stratified 80% split. A label with a
    /// single class gets a constant classifier.
    pub fn fit(labelled: &[(Prompt, SemanticFeature)], cfg: &ClassifierConfig, seed: u64) -> Result<Self, MetricsError> {
        let feats: Vec<SemanticFeature> = labelled.iter().map(|(_, f)| f.clone()).collect();
        let periods: Vec<String> = labelled.iter().map(|(p, _)| p.period.to_string()).collect();
        let instr: Vec<String> = labelled
            .iter()
            .map(|(p, _)| p.instrumentation.map_or_else(|| "-".to_string(), |i| i.to_string()))
            .collect();
        let (period, a) = fit_one(&feats, &periods, cfg, seed)?;
        let (instrumentation, b) = fit_one(&feats, &instr, cfg, seed)?;
        Ok(LabelModels {
            period,
            instrumentation,
            holdout: (a, b),
        })
    }

    /// Label accuracies of generated pieces against their prompts; pieces
    /// without features count as misses.
    pub fn accuracy(&self, pieces: &[ScoredPiece]) -> Result<(f64, f64), MetricsError> {
        if pieces.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let (mut a, mut b) = (0, 0);
        for p in pieces {
            let Some(f) = &p.feature else { continue };
            if self.period.predict(f)? == p.prompt.period.to_string() {
                a += 1;
            }
            let instr = p.prompt.instrumentation.map_or_else(|| "-".to_string(), |i| i.to_string());
            if self.instrumentation.predict(f)? == instr {
                b += 1;
            }
        }
        let n = pieces.len() as f64;
        Ok((a as f64 / n, b as f64 / n))
    }
}

/// Metrics of one set of generated pieces. `ppl` is measured separately on
/// held-out ground truth.
pub fn generation_report(
    iteration: usize,
    pieces: &[ScoredPiece],
    labels: &LabelModels,
    ppl: f64,
) -> Result<MetricReport, MetricsError> {
    let scores: Vec<f64> = pieces.iter().map(|p| p.score).collect();
    let (la_period, la_instrumentation) = labels.accuracy(pieces)?;
    let bae = bar_alignment_error(&pieces.iter().map(|p| p.text.as_str()).collect::<Vec<_>>());
    Ok(MetricReport {
        iteration,
        acs: acs(&scores)?,
        la_period,
        la_instrumentation,
        bae: bae.fraction(),
        ppl,
        pieces: pieces.len(),
        bars: bae.total,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub iteration: usize,
    pub acs: f64,
    pub la_period: f64,
    pub la_instrumentation: f64,
    pub bae: f64,
    pub ppl: f64,
    pub pieces: usize,
    pub bars: usize,
}

const FIELDS: [&str; 8] = ["iteration", "acs", "la_period", "la_instrumentation", "bae", "ppl", "pieces", "bars"];

impl MetricReport {
    fn values(&self) -> [String; 8] {
        [
            self.iteration.to_string(),
            format!("{:.6}", self.acs),
            format!("{:.6}", self.la_period),
            format!("{:.6}", self.la_instrumentation),
            format!("{:.6}", self.bae),
            format!("{:.6}", self.ppl),
            self.pieces.to_string(),
            self.bars.to_string(),
        ]
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in FIELDS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut r = MetricReport::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |reason: &str| MetricsError::BadReport {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let f = || v.trim().parse::<f64>().map_err(|_| bad("bad number"));
            let u = || v.trim().parse::<usize>().map_err(|_| bad("bad count"));
            match k.trim() {
                "iteration" => r.iteration = u()?,
                "acs" => r.acs = f()?,
                "la_period" => r.la_period = f()?,
                "la_instrumentation" => r.la_instrumentation = f()?,
                "bae" => r.bae = f()?,
                "ppl" => r.ppl = f()?,
                "pieces" => r.pieces = u()?,
                "bars" => r.bars = u()?,
                _ => return Err(bad("unknown key")),
            }
        }
        Ok(r)
    }

    pub fn csv_header() -> String {
        FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Renders a trajectory of reports as a CSV table.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut out = MetricReport::csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
