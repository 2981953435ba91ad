//! Corpus utilities that run without a config: synthetic corpus, ingest,
//! preprocess, tokenize, report and the MIDI codec.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scoregen::abc::{parse_sheet, serialize_sheet};
use scoregen::metrics::{render_table, MetricReport};
use scoregen::midi::{decode_seq, encode_timeline, frame_piece, read_smf, read_token_stream, write_token_stream};
use scoregen::patching::{tokenize, write_token_dump};
use scoregen::preprocess::{
    choose_key, clean_text_annotations, prepend_prompt, preprocess_sheet, transpose, ManifestRecord, Stage,
    TextWhitelist,
};
use scoregen::synth::{two_style_corpus, SynthConfig};

use crate::artifacts::OutputDir;
use crate::corpus::{load_pieces, manifest_text, read_text};
use crate::error::{io_err, CliError};

pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub pieces_per_prompt: usize,
    pub purity: f64,
    /// Every n-th piece of a prompt goes to the test split; 0 keeps all in train.
    pub test_every: usize,
}

pub fn synth_corpus(a: &SynthArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.purity) {
        return Err(CliError::config("--purity", "must lie in [0, 1]"));
    }
    let mut out = OutputDir::create(&a.out)?;
    let cfg = SynthConfig {
        pieces_per_prompt: a.pieces_per_prompt,
        purity: a.purity,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let mut records = Vec::new();
    for (i, p) in two_style_corpus(&cfg).iter().enumerate() {
        let rel = format!("pieces/{}.abc", p.id);
        out.write(&rel, p.text.as_bytes())?;
        let test = a.test_every > 0 && i % a.test_every == a.test_every - 1;
        records.push(ManifestRecord {
            path: rel,
            prompt: p.prompt.clone(),
            split: if test { "test" } else { "train" }.to_string(),
        });
    }
    out.write("manifest.tsv", manifest_text(&records).as_bytes())?;
    log::info!("wrote {} pieces to {}", records.len(), a.out.display());
    out.finish()?;
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "piece".into())
}

/// Parses every piece, drops lyrics and non-whitelisted text, and writes the
/// normalised sheets. Pieces that fail to parse are listed, not fatal.
pub fn ingest(manifest: &Path, out_dir: &Path) -> Result<(), CliError> {
    let pieces = load_pieces(manifest)?;
    let mut out = OutputDir::create(out_dir)?;
    let wl = TextWhitelist::default();
    let mut records = Vec::new();
    let mut report = String::new();
    for (i, p) in pieces.iter().enumerate() {
        let sheet = match parse_sheet(p.body()?) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: {e}", p.source.display());
                let _ = writeln!(report, "rejected\t{}\t{e}", p.record.path);
                continue;
            }
        };
        let rel = format!("ingested/{i:05}_{}.abc", stem(&p.source));
        out.write(&rel, serialize_sheet(&clean_text_annotations(&sheet, &wl)).as_bytes())?;
        records.push(ManifestRecord {
            path: rel,
            ..p.record.clone()
        });
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no piece could be parsed", manifest.display())));
    }
    let summary = format!("pieces={}\naccepted={}\nrejected={}\n{report}", pieces.len(), records.len(), pieces.len() - records.len());
    out.write("ingest_report.txt", summary.as_bytes())?;
    out.write("manifest.tsv", manifest_text(&records).as_bytes())?;
    out.finish()?;
    Ok(())
}

pub struct PreprocessArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub prompt: bool,
    pub transpose: Option<Stage>,
    pub seed: u64,
}

/// Interleaves, strips all-rest measures, labels bars and optionally
/// transposes and prepends the prompt line.
pub fn preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    let pieces = load_pieces(&a.manifest)?;
    let mut out = OutputDir::create(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records = Vec::new();
    let mut ratios = Vec::new();
    let (mut bars_in, mut bars_out) = (0usize, 0usize);
    let mut rejected = String::new();
    for (i, p) in pieces.iter().enumerate() {
        let ctx = |e: &dyn std::fmt::Display| format!("{}: {e}", p.source.display());
        let sheet = match parse_sheet(p.body()?) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}", ctx(&e));
                let _ = writeln!(rejected, "rejected\t{}\t{e}", p.record.path);
                continue;
            }
        };
        let mut isheet = preprocess_sheet(&sheet).map_err(|e| CliError::Data(ctx(&e)))?;
        bars_in += sheet.bar_count();
        bars_out += isheet.measures.len();
        ratios.push(*isheet.length_ratio_after_strip.numer() as f64 / *isheet.length_ratio_after_strip.denom() as f64);
        if let Some(stage) = a.transpose {
            let choice = choose_key(stage, &isheet.header.key, &mut rng).map_err(|e| CliError::Data(ctx(&e)))?;
            isheet = transpose(&isheet, &choice).map_err(|e| CliError::Data(ctx(&e)))?;
        }
        let mut text = isheet.to_annotated_text();
        if a.prompt {
            text = prepend_prompt(&text, &p.record.prompt);
        }
        let rel = format!("processed/{i:05}_{}.abc", stem(&p.source));
        out.write(&rel, text.as_bytes())?;
        records.push(ManifestRecord {
            path: rel,
            ..p.record.clone()
        });
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no piece could be parsed", a.manifest.display())));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let stats = format!(
        "pieces={}\nprocessed={}\nrejected={}\nbars_before={bars_in}\nbars_after={bars_out}\nmean_length_ratio={mean:.6}\n{rejected}",
        pieces.len(),
        records.len(),
        pieces.len() - records.len(),
    );
    out.write("preprocess_stats.txt", stats.as_bytes())?;
    out.write("manifest.tsv", manifest_text(&records).as_bytes())?;
    out.finish()?;
    log::info!("processed {} pieces, mean length ratio {mean:.4}", records.len());
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn tokenize_file(input: &Path, patch_size: usize, out: Option<&Path>) -> Result<(), CliError> {
    let ps = tokenize(&read_text(input)?, patch_size).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    write_or_print(out, &write_token_dump(&ps))
}

/// Metric files in iteration order. A directory contributes its
/// `round*/metrics.txt` files.
fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<MetricReport>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path().join("metrics.txt")))
                .filter(|m| m.is_file())
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut reports = files
        .iter()
        .map(|f| MetricReport::parse(&read_text(f)?).map_err(|e| CliError::Data(format!("{}: {e}", f.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    if reports.is_empty() {
        return Err(CliError::Data("no metric reports found".into()));
    }
    reports.sort_by_key(|r| r.iteration);
    Ok(reports)
}

pub fn report(inputs: &[PathBuf], csv: bool) -> Result<String, CliError> {
    let reports = collect_reports(inputs)?;
    Ok(if csv {
        let mut s = MetricReport::csv_header();
        s.push('\n');
        for r in &reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    } else {
        render_table(&reports)
    })
}

pub fn midi_encode(input: &Path, out: Option<&Path>, period: Option<u8>, composer: Option<u8>) -> Result<(), CliError> {
    let bytes = fs::read(input).map_err(io_err(input))?;
    let ctx = |e: scoregen::midi::CodecError| CliError::Data(format!("{}: {e}", input.display()));
    let smf = read_smf(&bytes).map_err(ctx)?;
    let body = encode_timeline(&smf.events, smf.ticks_per_beat).map_err(ctx)?;
    let framed = frame_piece(period, composer, &body).map_err(ctx)?;
    write_or_print(out, &write_token_stream(&framed))
}

pub fn midi_decode(input: &Path) -> Result<String, CliError> {
    let ctx = |e: scoregen::midi::CodecError| CliError::Data(format!("{}: {e}", input.display()));
    let seqs = read_token_stream(&read_text(input)?).map_err(ctx)?;
    let mut out = String::new();
    for s in &seqs {
        let _ = writeln!(out, "{:?}", decode_seq(s).map_err(ctx)?);
    }
    Ok(out)
}
