//! Preference optimisation: DPO/DPOP losses, chosen/rejected selection with
//! filters, and the iterative generate-score-optimise loop.

mod driver;
mod filters;
mod loss;

use rand::Rng;
use thiserror::Error;

use crate::evaluator::{EvalError, ScoredPiece};
use crate::model::{ModelError, SamplingConfig};
use crate::preprocess::Prompt;

pub use driver::{clamp_dpo, generate_and_score, piece_seed, DpoIteration, IterationReport, PromptPoolStats};
pub use filters::{
    check_plagiarism, check_staves_grouped, check_syntax, filter_piece, normalized_body, FilterFlags, FilterReport,
    PlagiarismConfig, PlagiarismIndex,
};
pub use loss::{dpo_loss, dpop_loss, dpop_loss_grad, LossGrad};

#[derive(Debug, Error)]
pub enum DpoError {
    #[error("prompt {prompt}: {chosen} chosen and {rejected} rejected candidates")]
    InsufficientEligible { prompt: String, chosen: usize, rejected: usize },
    #[error("invalid {field}: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("{0} scored pieces but {1} filter reports")]
    FilterMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpoConfig {
    pub beta: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// Optimizer steps per iteration.
    pub steps: usize,
    pub lr: f64,
    pub generations_per_prompt: usize,
    pub select_fraction: f64,
    /// Pairs per optimizer step.
    pub batch_pairs: usize,
    /// Pair budget per prompt as a multiple of the pool size.
    pub pairs_per_pool: usize,
    pub seed: u64,
    pub workers: usize,
    pub sampling: SamplingConfig,
    pub plagiarism: PlagiarismConfig,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            lambda: 10.0,
            iterations: 3,
            steps: 10_000,
            lr: 1e-6,
            generations_per_prompt: 100,
            select_fraction: 0.1,
            batch_pairs: 1,
            pairs_per_pool: 4,
            seed: 0,
            workers: 1,
            sampling: SamplingConfig::default(),
            plagiarism: PlagiarismConfig::default(),
        }
    }
}

impl DpoConfig {
    /// Settings for the small two-style corpus.
    pub fn desk() -> Self {
        DpoConfig {
            iterations: 2,
            steps: 200,
            lr: 5e-6,
            generations_per_prompt: 50,
            batch_pairs: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DpoError> {
        let bad = |field, reason: &str| {
            Err(DpoError::BadConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be non-negative");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be non-negative");
        }
        if !(self.select_fraction > 0.0 && self.select_fraction <= 0.5) {
            return bad("select_fraction", "must lie in (0, 0.5]");
        }
        if self.generations_per_prompt == 0 {
            return bad("generations_per_prompt", "must be positive");
        }
        if self.batch_pairs == 0 {
            return bad("batch_pairs", "must be positive");
        }
        if self.plagiarism.ngram == 0 {
            return bad("plagiarism.ngram", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub prompt: Prompt,
    pub chosen_id: String,
    pub chosen: String,
    pub chosen_score: f64,
    pub rejected_id: String,
    pub rejected: String,
    pub rejected_score: f64,
    /// Reference log-probabilities `(chosen, rejected)`, filled in once the
    /// reference policy is frozen.
    pub ref_log_probs: Option<(f64, f64)>,
}

/// Size of each pool: `ceil(fraction · n)`.
pub fn pool_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices (into `scored`) of the chosen and rejected pools. Pieces are
/// ranked by score, descending, ties by id; the chosen pool takes the first
/// `m` chosen-eligible pieces and the rejected pool the last `m`
/// rejected-eligible pieces not already chosen.
pub fn select_pools(
    scored: &[ScoredPiece],
    filters: &[FilterReport],
    fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>), DpoError> {
    if scored.len() != filters.len() {
        return Err(DpoError::FilterMismatch(scored.len(), filters.len()));
    }
    let m = pool_size(scored.len(), fraction);
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .score
            .total_cmp(&scored[a].score)
            .then_with(|| scored[a].id.cmp(&scored[b].id))
    });
    let chosen: Vec<usize> = order.iter().copied().filter(|&i| filters[i].eligible_chosen).take(m).collect();
    let mut rejected: Vec<usize> = order
        .iter()
        .rev()
        .copied()
        .filter(|&i| filters[i].eligible_rejected && !chosen.contains(&i))
        .take(m)
        .collect();
    rejected.reverse();
    Ok((chosen, rejected))
}

/// Builds preference pairs for the pieces of one prompt. Only combinations
/// whose chosen score beats the rejected score are used; the pair count is
/// `min(#combinations, pairs_per_pool · m)`, drawn with replacement.
pub fn select_pairs<R: Rng + ?Sized>(
    scored: &[ScoredPiece],
    filters: &[FilterReport],
    cfg: &DpoConfig,
    rng: &mut R,
) -> Result<Vec<PreferencePair>, DpoError> {
    let (chosen, rejected) = select_pools(scored, filters, cfg.select_fraction)?;
    let combos: Vec<(usize, usize)> = chosen
        .iter()
        .flat_map(|&c| rejected.iter().map(move |&r| (c, r)))
        .filter(|&(c, r)| scored[c].score > scored[r].score)
        .collect();
    if combos.is_empty() {
        return Err(DpoError::InsufficientEligible {
            prompt: scored.first().map(|p| p.prompt.to_string()).unwrap_or_default(),
            chosen: chosen.len(),
            rejected: rejected.len(),
        });
    }
    let count = combos.len().min(cfg.pairs_per_pool * pool_size(scored.len(), cfg.select_fraction));
    Ok((0..count)
        .map(|_| {
            let (c, r) = combos[rng.gen_range(0..combos.len())];
            PreferencePair {
                prompt: scored[c].prompt.clone(),
                chosen_id: scored[c].id.clone(),
                chosen: scored[c].text.clone(),
                chosen_score: scored[c].score,
                rejected_id: scored[r].id.clone(),
                rejected: scored[r].text.clone(),
                rejected_score: scored[r].score,
                ref_log_probs: None,
            }
        })
        .collect())
}

/// Tab-separated pairs manifest: prompt, chosen id, chosen score, rejected
/// id, rejected score, reference log-probs.
pub fn format_pairs(pairs: &[PreferencePair]) -> String {
    let mut out = String::from("prompt\tchosen\tchosen_score\trejected\trejected_score\tref_chosen\tref_rejected\n");
    for p in pairs {
        let (a, b) = p.ref_log_probs.unwrap_or((f64::NAN, f64::NAN));
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.prompt, p.chosen_id, p.chosen_score, p.rejected_id, p.rejected_score, a, b
        ));
    }
    out
}
