//! Config-driven stages: training, generation, preference optimisation and
//! evaluation. Each writes `config.resolved` and an artifact list.

use std::fmt::Write as _;
use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scoregen::dpo::{clamp_dpo, format_pairs, generate_and_score, piece_seed, PlagiarismIndex};
use scoregen::evaluator::{
    build_prompt_set, score_piece, BaselineExtractor, FeatureExtractor, FeatureTable, PromptProfile, ScoredPiece,
    SemanticFeature, TableExtractor, UNPARSEABLE_SCORE,
};
use scoregen::metrics::{generation_report, perplexity, ClassifierConfig, LabelModels, MetricReport};
use scoregen::model::{
    encode_segment, encode_training_text, generate, load_checkpoint, train, write_training_log, AdamW, AdamWConfig, Checkpoint,
    ModelError, Policy, SamplingConfig,
};
use scoregen::preprocess::{make_segment, prepend_prompt, strip_prompt};

use crate::artifacts::OutputDir;
use crate::config::{FeatureSource, RunConfig, Stage};
use crate::corpus::{distinct_prompts, load_pieces, read_text, test_or_all, train_split, Piece};
use crate::error::CliError;

fn start(cfg: &RunConfig) -> Result<OutputDir, CliError> {
    let out = OutputDir::create(&cfg.output)?;
    let path = out.path("config.resolved");
    fs::write(&path, cfg.to_text()).map_err(crate::error::io_err(&path))?;
    Ok(out)
}

fn checkpoint_bytes(policy: &Policy, opt: Option<&AdamW>) -> Vec<u8> {
    Checkpoint {
        policy: policy.clone(),
        optimizer: opt.cloned(),
    }
    .to_bytes()
}

fn load_policy(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| CliError::config("paths.checkpoint", "required"))?;
    load_checkpoint(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

/// Pretraining starts from fresh weights unless a checkpoint is given;
/// fine-tuning continues from one. Long texts are cut to a random
/// line-aligned window once, before training.
pub fn run_train(cfg: &RunConfig) -> Result<(), CliError> {
    let pieces = load_pieces(cfg.manifest.as_ref().unwrap())?;
    let mut out = start(cfg)?;
    let (mut policy, mut opt) = match (&cfg.checkpoint, cfg.stage) {
        (Some(_), _) => {
            let ck = load_policy(cfg)?;
            let opt = match (ck.optimizer, cfg.stage) {
                (Some(o), Stage::Pretrain) => o,
                _ => AdamW::new(&ck.policy, AdamWConfig::default()),
            };
            (ck.policy, opt)
        }
        (None, _) => {
            let p = Policy::new(cfg.model.clone())?;
            let o = AdamW::new(&p, AdamWConfig::default());
            (p, o)
        }
    };
    let budget = if cfg.segment_chars > 0 {
        cfg.segment_chars
    } else {
        policy.config.context_patches * policy.config.patch_size
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = Vec::new();
    for p in train_split(&pieces) {
        let (prompt, body) = strip_prompt(&p.text).map_err(|e| CliError::Data(format!("{}: {e}", p.source.display())))?;
        let seg = make_segment(body, budget, &mut rng).map_err(|e| CliError::Data(format!("{}: {e}", p.source.display())))?;
        let text = match prompt {
            Some(pr) => prepend_prompt(&seg.text, &pr),
            None => seg.text,
        };
        let seq = encode_segment(&policy, &text, seg.starts_piece, seg.ends_piece);
        corpus.push(seq.map_err(|e| CliError::from(e).context(&p.source.display().to_string()))?);
    }
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let records = train(&mut policy, &corpus, &tc, &mut opt, |r| {
        if r.step % 100 == 0 || r.step == tc.steps {
            log::info!("step {} loss {:.4}", r.step, r.loss);
        }
    })?;
    out.write("train_log.tsv", write_training_log(&records).as_bytes())?;
    out.write("policy.ckpt", &checkpoint_bytes(&policy, Some(&opt)))?;
    out.finish()?;
    Ok(())
}

fn sampling_for(cfg: &RunConfig, prompt: usize, index: usize) -> SamplingConfig {
    SamplingConfig {
        seed: piece_seed(cfg.seed, 0, prompt, index),
        ..cfg.dpo.sampling.clone()
    }
}

/// `generate.count` pieces per manifest prompt, each file starting with its
/// prompt line. Pieces that hit the length cap are skipped and listed.
pub fn run_generate(cfg: &RunConfig) -> Result<(), CliError> {
    let pieces = load_pieces(cfg.manifest.as_ref().unwrap())?;
    let policy = load_policy(cfg)?.policy;
    let mut out = start(cfg)?;
    let mut skipped = String::new();
    for (pi, prompt) in distinct_prompts(&pieces).iter().enumerate() {
        for i in 0..cfg.generate_count {
            let line = prompt.line();
            match generate(&policy, &line, &sampling_for(cfg, pi, i)) {
                Ok(text) => {
                    out.write(&format!("generations/{pi:03}_{i:04}.abc"), text.as_bytes())?;
                }
                Err(ModelError::MaxLengthExceeded { limit }) => {
                    log::warn!("prompt {pi} piece {i}: hit the {limit}-patch cap");
                    let _ = writeln!(skipped, "{pi:03}_{i:04}\tmax_new_patches");
                }
                Err(e) => return Err(CliError::from(e).context(&format!("prompt {prompt}, piece {i}"))),
            }
        }
    }
    if !skipped.is_empty() {
        out.write("skipped.tsv", skipped.as_bytes())?;
    }
    out.finish()?;
    Ok(())
}

/// Ground truth shared by `dpo` and `eval`.
struct Reference {
    labelled: Vec<(scoregen::preprocess::Prompt, SemanticFeature)>,
    bodies: Vec<String>,
    profiles: Vec<PromptProfile>,
    labels: LabelModels,
    held_out: Vec<String>,
}

fn feature_of(extractor: &dyn FeatureExtractor, table: Option<&TableExtractor>, id: &str, body: &str) -> Result<SemanticFeature, CliError> {
    match table {
        Some(t) => t.get(id).cloned().ok_or_else(|| CliError::Data(format!("no feature row for {id}"))),
        None => extractor.extract(body).map_err(|e| CliError::Data(format!("{id}: {e}"))),
    }
}

fn load_table(cfg: &RunConfig) -> Result<Option<TableExtractor>, CliError> {
    match &cfg.features {
        FeatureSource::Baseline => Ok(None),
        FeatureSource::Table(p) => {
            let t = FeatureTable::parse(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(Some(TableExtractor::new(t)))
        }
    }
}

fn reference(cfg: &RunConfig, pieces: &[Piece], table: Option<&TableExtractor>) -> Result<Reference, CliError> {
    let mut labelled = Vec::new();
    let mut bodies = Vec::new();
    for p in pieces {
        let body = p.body()?.to_string();
        labelled.push((p.record.prompt.clone(), feature_of(&BaselineExtractor, table, &p.id(), &body)?));
        bodies.push(body);
    }
    let profiles = build_prompt_set(&labelled, cfg.min_prompt_count)?;
    if profiles.is_empty() {
        return Err(CliError::Data(format!(
            "no prompt has more than {} ground-truth pieces",
            cfg.min_prompt_count
        )));
    }
    let labels = LabelModels::fit(&labelled, &ClassifierConfig::default(), cfg.seed)?;
    log::info!("label classifier hold-out accuracy {:.3}/{:.3}", labels.holdout.0, labels.holdout.1);
    let held_out = test_or_all(pieces).iter().map(|p| p.text.clone()).collect();
    Ok(Reference {
        labelled,
        bodies,
        profiles,
        labels,
        held_out,
    })
}

fn corpus_perplexity(policy: &Policy, texts: &[String]) -> Result<f64, CliError> {
    let seqs = texts.iter().map(|t| encode_training_text(policy, t)).collect::<Result<Vec<_>, _>>()?;
    Ok(perplexity(policy, &seqs)?)
}

fn scores_tsv(pieces: &[ScoredPiece], flags: Option<&[scoregen::dpo::FilterReport]>) -> String {
    let mut s = String::from("id\tprompt\tscore\tparsed");
    if flags.is_some() {
        s.push_str("\tsyntax_error\tstaves_ungrouped\tplagiarized");
    }
    s.push('\n');
    for (i, p) in pieces.iter().enumerate() {
        let _ = write!(s, "{}\t{}\t{:?}\t{}", p.id, p.prompt, p.score, p.feature.is_some());
        if let Some(f) = flags {
            let f = f[i].flags;
            let _ = write!(s, "\t{}\t{}\t{}", f.syntax_error, f.staves_ungrouped, f.plagiarized);
        }
        s.push('\n');
    }
    s
}

/// Iterative preference optimisation from `paths.checkpoint`. Round k's
/// directory holds the pieces generated after k rounds, their scores and
/// filters, the selected pairs, the round report and metrics; for k < K it
/// also holds the policy after that round's updates.
pub fn run_dpo(cfg: &RunConfig) -> Result<(), CliError> {
    let pieces = load_pieces(cfg.manifest.as_ref().unwrap())?;
    let mut policy = load_policy(cfg)?.policy;
    let reference = reference(cfg, &pieces, None)?;
    let mut out = start(cfg)?;
    let index = PlagiarismIndex::new(&reference.bodies, cfg.dpo.plagiarism.clone());
    let mut ppl = corpus_perplexity(&policy, &reference.held_out)?;
    let mut metrics = Vec::new();
    let mut failure: Option<CliError> = None;
    let k_total = cfg.dpo.iterations;
    let reports = clamp_dpo(&mut policy, &reference.profiles, &BaselineExtractor, &index, &cfg.dpo, |it, next| {
        if failure.is_some() {
            return;
        }
        let k = it.report.iteration;
        let mut round = || -> Result<(), CliError> {
            let dir = format!("round{k}");
            for p in &it.pieces {
                let text = prepend_prompt(&p.text, &p.prompt);
                out.write(&format!("{dir}/generations/{}.abc", p.id), text.as_bytes())?;
            }
            out.write(&format!("{dir}/scores.tsv"), scores_tsv(&it.pieces, Some(&it.filters)).as_bytes())?;
            out.write(&format!("{dir}/pairs.tsv"), format_pairs(&it.pairs).as_bytes())?;
            out.write(&format!("{dir}/report.txt"), it.report.to_text().as_bytes())?;
            let m = generation_report(k, &it.pieces, &reference.labels, ppl)?;
            out.write(&format!("{dir}/metrics.txt"), m.to_text().as_bytes())?;
            log::info!("round {k}: acs {:.4} la {:.3} bae {:.4} ppl {:.4}", m.acs, m.la_period, m.bae, m.ppl);
            metrics.push(m);
            if k < k_total {
                out.write(&format!("{dir}/policy.ckpt"), &checkpoint_bytes(next, None))?;
                ppl = corpus_perplexity(next, &reference.held_out)?;
            }
            Ok(())
        };
        if let Err(e) = round() {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut csv = MetricReport::csv_header();
    csv.push('\n');
    for m in &metrics {
        csv.push_str(&m.csv_row());
        csv.push('\n');
    }
    out.write("metrics.csv", csv.as_bytes())?;
    let final_ckpt = if k_total == 0 {
        let src = cfg.checkpoint.as_ref().unwrap();
        fs::read(src).map_err(crate::error::io_err(src))?
    } else {
        checkpoint_bytes(&policy, None)
    };
    out.write("policy.ckpt", &final_ckpt)?;
    let summary: String = reports.iter().map(|r| format!("{}\n", r.to_text())).collect();
    out.write("dpo_summary.txt", summary.as_bytes())?;
    out.finish()?;
    Ok(())
}

/// Reads generated pieces (each starting with its prompt line) from a
/// directory, sorted by file name.
fn read_generations(cfg: &RunConfig, reference: &Reference, table: Option<&TableExtractor>) -> Result<Vec<ScoredPiece>, CliError> {
    let dir = cfg.generations.as_ref().unwrap();
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(crate::error::io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "abc"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = read_text(&f)?;
        let id = f.file_stem().unwrap().to_string_lossy().into_owned();
        let (prompt, body) = strip_prompt(&text).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
        let prompt = prompt.ok_or_else(|| CliError::Data(format!("{}: missing prompt line", f.display())))?;
        let Some(profile) = reference.profiles.iter().find(|p| p.prompt == prompt) else {
            log::warn!("{}: prompt {prompt} has no ground-truth profile; skipped", f.display());
            continue;
        };
        let piece = match table {
            Some(t) => {
                let feature = feature_of(&BaselineExtractor, Some(t), &id, body)?;
                let score = scoregen::evaluator::clamp2_score(&feature, &profile.mean_feature).unwrap_or(UNPARSEABLE_SCORE);
                ScoredPiece {
                    id,
                    prompt,
                    text: body.to_string(),
                    feature: Some(feature),
                    score,
                }
            }
            None => score_piece(&BaselineExtractor, &id, body, profile)?,
        };
        out.push(piece);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no scoreable generations", dir.display())));
    }
    Ok(out)
}

/// Metrics of a checkpoint: scores given generations, or samples
/// `dpo.generations_per_prompt` fresh ones per prompt.
pub fn run_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let pieces = load_pieces(cfg.manifest.as_ref().unwrap())?;
    let policy = load_policy(cfg)?.policy;
    let table = load_table(cfg)?;
    let reference = reference(cfg, &pieces, table.as_ref())?;
    log::debug!("{} labelled ground-truth pieces", reference.labelled.len());
    let mut out = start(cfg)?;
    let scored = match &cfg.generations {
        Some(_) => read_generations(cfg, &reference, table.as_ref())?,
        None => generate_and_score(&policy, &reference.profiles, &BaselineExtractor, &cfg.dpo, 0)?,
    };
    let ppl = corpus_perplexity(&policy, &reference.held_out)?;
    let m = generation_report(0, &scored, &reference.labels, ppl)?;
    out.write("scores.tsv", scores_tsv(&scored, None).as_bytes())?;
    out.write("metrics.txt", m.to_text().as_bytes())?;
    out.finish()?;
    println!("{}", m.to_text().trim_end());
    Ok(())
}
