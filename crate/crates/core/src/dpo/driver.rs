use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{filter_piece, dpop_loss, dpop_loss_grad, select_pairs, DpoConfig, DpoError, FilterReport, PlagiarismIndex, PreferencePair};
use crate::evaluator::{score_piece, FeatureExtractor, PromptProfile, ScoredPiece};
use crate::metrics::acs;
use crate::model::{generate, AdamW, AdamWConfig, ModelError, Policy, SamplingConfig, ScoreJob, ScoredSeq};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sampling seed of one generated piece.
pub fn piece_seed(base: u64, iteration: usize, prompt: usize, index: usize) -> u64 {
    splitmix(splitmix(splitmix(base ^ iteration as u64) ^ prompt as u64) ^ index as u64)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptPoolStats {
    pub prompt: String,
    pub generated: usize,
    pub syntax_errors: usize,
    pub staves_ungrouped: usize,
    pub plagiarized: usize,
    pub chosen: usize,
    pub rejected: usize,
    pub pairs: usize,
    pub acs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationReport {
    /// Generations of this report come from the policy after `iteration`
    /// optimisation rounds.
    pub iteration: usize,
    pub acs: f64,
    pub pools: Vec<PromptPoolStats>,
    pub pairs: usize,
    pub steps_run: usize,
    pub loss_start: Option<f64>,
    pub loss_end: Option<f64>,
    pub rolled_back: bool,
}

impl IterationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "iteration={}", self.iteration);
        let _ = writeln!(out, "acs={:.6}", self.acs);
        let _ = writeln!(out, "pairs={}", self.pairs);
        let _ = writeln!(out, "steps_run={}", self.steps_run);
        let _ = writeln!(out, "loss_start={}", opt(self.loss_start));
        let _ = writeln!(out, "loss_end={}", opt(self.loss_end));
        let _ = writeln!(out, "rolled_back={}", self.rolled_back);
        for p in &self.pools {
            let _ = writeln!(
                out,
                "pool prompt={} generated={} acs={:.6} syntax_errors={} staves_ungrouped={} plagiarized={} chosen={} rejected={} pairs={}",
                p.prompt, p.generated, p.acs, p.syntax_errors, p.staves_ungrouped, p.plagiarized, p.chosen, p.rejected, p.pairs
            );
        }
        out
    }
}

/// Everything one round produced.
#[derive(Clone, Debug)]
pub struct DpoIteration {
    pub report: IterationReport,
    pub pieces: Vec<ScoredPiece>,
    pub filters: Vec<FilterReport>,
    pub pairs: Vec<PreferencePair>,
}

fn generate_piece(policy: &Policy, prompt_line: &str, sampling: &SamplingConfig) -> Result<String, ModelError> {
    match generate(policy, prompt_line, sampling) {
        Ok(t) => Ok(t.strip_prefix(prompt_line).unwrap_or(&t).to_string()),
        Err(ModelError::MaxLengthExceeded { limit }) => {
            log::warn!("generation hit the {limit}-patch cap; kept as an empty piece");
            Ok(String::new())
        }
        Err(e) => Err(e),
    }
}

/// Samples `generations_per_prompt` pieces per prompt and scores them
/// against the prompt's mean ground-truth feature. Pieces are grouped by
/// prompt, in profile order.
pub fn generate_and_score(
    policy: &Policy,
    profiles: &[PromptProfile],
    extractor: &dyn FeatureExtractor,
    cfg: &DpoConfig,
    iteration: usize,
) -> Result<Vec<ScoredPiece>, DpoError> {
    let jobs: Vec<(usize, usize)> = (0..profiles.len())
        .flat_map(|p| (0..cfg.generations_per_prompt).map(move |g| (p, g)))
        .collect();
    let run = |&(p, g): &(usize, usize)| -> Result<ScoredPiece, DpoError> {
        let profile = &profiles[p];
        let line = profile.prompt.line();
        let seed = piece_seed(cfg.seed, iteration, p, g);
        let sampling = SamplingConfig {
            seed,
            ..cfg.sampling.clone()
        };
        let text = generate_piece(policy, &line, &sampling)?;
        let id = format!("{:016x}-{seed:016x}", fnv1a(&profile.prompt.to_string()));
        Ok(score_piece(extractor, &id, &text, profile)?)
    };
    let mut out = Vec::with_capacity(jobs.len());
    for wave in jobs.chunks(cfg.workers.max(1)) {
        let results: Vec<Result<ScoredPiece, DpoError>> = if wave.len() == 1 {
            vec![run(&wave[0])]
        } else {
            std::thread::scope(|sc| {
                let hs: Vec<_> = wave.iter().map(|j| sc.spawn(move || run(j))).collect();
                hs.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
            })
        };
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Pair sequences encoded once, shared by every pair that uses a piece.
struct PairSeqs {
    seqs: Vec<ScoredSeq>,
    /// `(chosen, rejected)` indices into `seqs`, per pair.
    index: Vec<(usize, usize)>,
}

fn encode_pairs(policy: &Policy, pairs: &[PreferencePair]) -> Result<PairSeqs, ModelError> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut seqs = Vec::new();
    let mut index = Vec::with_capacity(pairs.len());
    for p in pairs {
        let line = p.prompt.line();
        let mut ends = [0; 2];
        for (slot, (id, text)) in [(&p.chosen_id, &p.chosen), (&p.rejected_id, &p.rejected)].into_iter().enumerate() {
            ends[slot] = match ids.get(id.as_str()) {
                Some(&i) => i,
                None => {
                    seqs.push(policy.encode_scored(&line, text)?);
                    ids.insert(id, seqs.len() - 1);
                    seqs.len() - 1
                }
            };
        }
        index.push((ends[0], ends[1]));
    }
    Ok(PairSeqs { seqs, index })
}

fn mean_pair_loss(lp: &[f64], pairs: &[PreferencePair], enc: &PairSeqs, cfg: &DpoConfig) -> f64 {
    let total: f64 = pairs
        .iter()
        .zip(&enc.index)
        .map(|(p, &(c, r))| {
            let (wr, lr) = p.ref_log_probs.expect("reference log-probs cached");
            dpop_loss(lp[c], wr, lp[r], lr, cfg.beta, cfg.lambda)
        })
        .sum();
    total / pairs.len() as f64
}

/// One DPOP step on a minibatch of pair indices.
fn dpop_step(
    policy: &mut Policy,
    opt: &mut AdamW,
    batch: &[usize],
    pairs: &[PreferencePair],
    enc: &PairSeqs,
    cfg: &DpoConfig,
) -> Result<f64, ModelError> {
    let mut used: Vec<usize> = batch.iter().flat_map(|&i| [enc.index[i].0, enc.index[i].1]).collect();
    used.sort_unstable();
    used.dedup();
    let seqs: Vec<ScoredSeq> = used.iter().map(|&i| enc.seqs[i].clone()).collect();
    let lps = policy.score_many(&seqs, cfg.workers)?;
    let pos = |i: usize| used.binary_search(&i).unwrap();
    let mut weights = vec![0.0; used.len()];
    let mut loss = 0.0;
    let b = batch.len() as f64;
    for &i in batch {
        let (c, r) = enc.index[i];
        let (wr, lr) = pairs[i].ref_log_probs.expect("reference log-probs cached");
        let g = dpop_loss_grad(lps[pos(c)], wr, lps[pos(r)], lr, cfg.beta, cfg.lambda);
        loss += g.loss / b;
        weights[pos(c)] += g.d_chosen / b;
        weights[pos(r)] += g.d_rejected / b;
    }
    let jobs: Vec<ScoreJob> = seqs.iter().zip(&weights).map(|(seq, &weight)| ScoreJob { seq, weight }).collect();
    let (_, grad) = policy.accumulate(&jobs, cfg.workers)?;
    opt.update(&mut policy.params, &grad, cfg.lr)?;
    Ok(loss)
}

/// Iterative preference optimisation. Round k generates with the current
/// policy, scores and filters the pieces, freezes the reference (its
/// log-probabilities are cached per piece) and runs `steps` DPOP updates.
/// A final round only generates and scores, so `iterations + 1` rounds are
/// passed to `on_round` and reported.
pub fn clamp_dpo(
    policy: &mut Policy,
    profiles: &[PromptProfile],
    extractor: &dyn FeatureExtractor,
    index: &PlagiarismIndex,
    cfg: &DpoConfig,
    mut on_round: impl FnMut(&DpoIteration, &Policy),
) -> Result<Vec<IterationReport>, DpoError> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for k in 0..=cfg.iterations {
        let pieces = generate_and_score(policy, profiles, extractor, cfg, k)?;
        let filters: Vec<FilterReport> = pieces.iter().map(|p| filter_piece(&p.id, &p.text, index)).collect();
        let mut report = IterationReport {
            iteration: k,
            acs: acs(&pieces.iter().map(|p| p.score).collect::<Vec<_>>()).unwrap_or(f64::NAN),
            ..Default::default()
        };
        let mut pairs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x5eed ^ k as u64));
        let n = cfg.generations_per_prompt;
        for (pi, profile) in profiles.iter().enumerate() {
            let group = &pieces[pi * n..(pi + 1) * n];
            let flags = &filters[pi * n..(pi + 1) * n];
            let mut stats = PromptPoolStats {
                prompt: profile.prompt.to_string(),
                generated: n,
                syntax_errors: flags.iter().filter(|f| f.flags.syntax_error).count(),
                staves_ungrouped: flags.iter().filter(|f| f.flags.staves_ungrouped).count(),
                plagiarized: flags.iter().filter(|f| f.flags.plagiarized).count(),
                acs: acs(&group.iter().map(|p| p.score).collect::<Vec<_>>()).unwrap_or(f64::NAN),
                ..Default::default()
            };
            if k < cfg.iterations {
                let (c, r) = super::select_pools(group, flags, cfg.select_fraction)?;
                stats.chosen = c.len();
                stats.rejected = r.len();
                match select_pairs(group, flags, cfg, &mut rng) {
                    Ok(p) => {
                        stats.pairs = p.len();
                        pairs.extend(p);
                    }
                    Err(e @ DpoError::InsufficientEligible { .. }) => log::warn!("round {k}: skipping prompt: {e}"),
                    Err(e) => return Err(e),
                }
            }
            report.pools.push(stats);
        }
        report.pairs = pairs.len();
        if k < cfg.iterations && !pairs.is_empty() {
            optimise_round(policy, &mut pairs, cfg, &mut rng, &mut report)?;
        }
        log::info!("round {k}: acs {:.4}, {} pairs", report.acs, report.pairs);
        on_round(
            &DpoIteration {
                report: report.clone(),
                pieces,
                filters,
                pairs,
            },
            policy,
        );
        reports.push(report);
    }
    Ok(reports)
}

fn optimise_round(
    policy: &mut Policy,
    pairs: &mut [PreferencePair],
    cfg: &DpoConfig,
    rng: &mut ChaCha8Rng,
    report: &mut IterationReport,
) -> Result<(), DpoError> {
    let enc = encode_pairs(policy, pairs)?;
    let ref_lp = policy.score_many(&enc.seqs, cfg.workers)?;
    for (p, &(c, r)) in pairs.iter_mut().zip(&enc.index) {
        p.ref_log_probs = Some((ref_lp[c], ref_lp[r]));
    }
    report.loss_start = Some(mean_pair_loss(&ref_lp, pairs, &enc, cfg));
    let snapshot = policy.params.clone();
    let mut opt = AdamW::new(
        policy,
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_pairs).map(|_| rng.gen_range(0..pairs.len())).collect();
        match dpop_step(policy, &mut opt, &batch, pairs, &enc, cfg) {
            Ok(loss) => log::debug!("dpop step {step}: {loss:.5}"),
            Err(ModelError::NonFiniteGradient) => {
                log::warn!("non-finite gradient at step {step}; rolling back the round");
                policy.params = snapshot;
                report.rolled_back = true;
                report.steps_run = step;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        }
        report.steps_run = step + 1;
    }
    let lp = policy.score_many(&enc.seqs, cfg.workers)?;
    report.loss_end = Some(mean_pair_loss(&lp, pairs, &enc, cfg));
    Ok(())
}
