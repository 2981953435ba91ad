//! Hierarchical decoder: a patch-level transformer over patch embeddings and
//! a character-level transformer that spells out the next patch.

mod checkpoint;
mod config;
mod generate;
mod ops;
mod optim;
mod params;
mod train;
mod transformer;

use thiserror::Error;

use crate::patching::{self, PatchError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use generate::{countdown_of, generate, generate_with_stats, GenerateStats, SamplingConfig, Termination};
pub use optim::{AdamW, AdamWConfig, WarmupSchedule};
pub use params::{Layout, TensorInfo};
pub use train::{
    encode_segment, encode_training_text, read_training_log, train, train_step, write_training_log, TrainConfig, TrainRecord,
};
pub use transformer::KvCache;

pub use ops::softmax_in_place;
use transformer::{lin, lin_back, norm, norm_back, stack_backward, stack_forward, stack_step};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} patches exceeds the context of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("generation exceeded {limit} patches")]
    MaxLengthExceeded { limit: usize },
    #[error("code {code} outside vocabulary of {vocab}")]
    CodeOutOfRange { code: u16, vocab: usize },
    #[error("patch of {found} codes, expected {expected}")]
    BadPatchLength { found: usize, expected: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Character logits, `[patches, patch_size, vocab]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub patches: usize,
    pub patch_size: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn at(&self, patch: usize, pos: usize) -> &[f64] {
        let o = (patch * self.patch_size + pos) * self.vocab;
        &self.data[o..o + self.vocab]
    }
}

/// A patch sequence starting with BOS whose patches from `first_scored`
/// onward are scored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoredSeq {
    pub patches: Vec<Vec<u16>>,
    pub first_scored: usize,
}

impl ScoredSeq {
    pub fn new(patches: Vec<Vec<u16>>, first_scored: usize) -> Self {
        ScoredSeq { patches, first_scored }
    }
}

/// One term of a weighted log-likelihood: `weight · log p(seq)`.
#[derive(Clone, Copy, Debug)]
pub struct ScoreJob<'a> {
    pub seq: &'a ScoredSeq,
    pub weight: f64,
}

/// Leading non-PAD codes plus the first PAD, which marks the patch end.
fn scored_positions(target: &[u16], pad: u16) -> usize {
    let content = target.iter().take_while(|&&c| c != pad).count();
    (content + 1).min(target.len())
}

struct Pass {
    t: usize,
    patch_caches: Vec<transformer::BlockCache>,
    patch_ln: ops::LnCache,
    char_caches: Vec<transformer::BlockCache>,
    char_ln: ops::LnCache,
    z: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl Policy {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = params::init_params(&config, &layout);
        Ok(Policy { config, layout, params })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn check_patch(&self, p: &[u16]) -> Result<(), ModelError> {
        let s = self.config.patch_size;
        if p.len() != s {
            return Err(ModelError::BadPatchLength {
                found: p.len(),
                expected: s,
            });
        }
        if let Some(&c) = p.iter().find(|&&c| c as usize >= self.config.char_vocab) {
            return Err(ModelError::CodeOutOfRange {
                code: c,
                vocab: self.config.char_vocab,
            });
        }
        Ok(())
    }

    /// Patch embedding: the flattened one-hot times the embedding matrix,
    /// computed as a sum of gathered rows, plus bias and position.
    fn embed_patch(&self, patch: &[u16], pos: usize, out: &mut [f64]) {
        let c = &self.config;
        let h = c.hidden;
        let pe = &self.layout.patch_embed;
        out.copy_from_slice(&self.params[pe.b..pe.b + h]);
        let pp = self.layout.patch_pos + pos * h;
        for (o, v) in out.iter_mut().zip(&self.params[pp..pp + h]) {
            *o += v;
        }
        for (i, &code) in patch.iter().enumerate() {
            let row = pe.w + (i * c.char_vocab + code as usize) * h;
            for (o, v) in out.iter_mut().zip(&self.params[row..row + h]) {
                *o += v;
            }
        }
    }

    fn char_input(&self, hpatch: &[f64], prev: Option<u16>, pos: usize, out: &mut [f64]) {
        let h = self.config.hidden;
        match prev {
            None => out.copy_from_slice(hpatch),
            Some(code) => {
                let o = self.layout.char_embed + code as usize * h;
                out.copy_from_slice(&self.params[o..o + h]);
            }
        }
        let cp = self.layout.char_pos + pos * h;
        for (o, v) in out.iter_mut().zip(&self.params[cp..cp + h]) {
            *o += v;
        }
    }

    fn run(&self, inputs: &[Vec<u16>], targets: &[Vec<u16>]) -> Result<Pass, ModelError> {
        let c = &self.config;
        let (h, s, heads) = (c.hidden, c.patch_size, c.heads);
        let t = inputs.len();
        if t > c.context_patches {
            return Err(ModelError::ContextOverflow {
                len: t,
                max: c.context_patches,
            });
        }
        for p in inputs.iter().chain(targets) {
            self.check_patch(p)?;
        }
        let p = &self.params;
        let mut x = vec![0.0; t * h];
        for (i, patch) in inputs.iter().enumerate() {
            self.embed_patch(patch, i, &mut x[i * h..(i + 1) * h]);
        }
        let (x, patch_caches) = stack_forward(p, &self.layout.patch_blocks, x, 1, t, h, heads);
        let (hpatch, patch_ln) = norm(p, &self.layout.patch_ln, &x, h);
        let mut char_in = vec![0.0; t * s * h];
        for i in 0..t {
            for j in 0..s {
                let prev = if j == 0 { None } else { Some(targets[i][j - 1]) };
                let o = (i * s + j) * h;
                self.char_input(&hpatch[i * h..(i + 1) * h], prev, j, &mut char_in[o..o + h]);
            }
        }
        let (y, char_caches) = stack_forward(p, &self.layout.char_blocks, char_in, t, s, h, heads);
        let (z, char_ln) = norm(p, &self.layout.char_ln, &y, h);
        let logits = lin(p, &self.layout.head, &z, t * s);
        Ok(Pass {
            t,
            patch_caches,
            patch_ln,
            char_caches,
            char_ln,
            z,
            logits,
        })
    }

    fn backward(&self, pass: &Pass, inputs: &[Vec<u16>], targets: &[Vec<u16>], dlogits: &[f64], grad: &mut [f64]) {
        let c = &self.config;
        let (h, s, heads, v) = (c.hidden, c.patch_size, c.heads, c.char_vocab);
        let t = pass.t;
        let p = &self.params;
        let dz = lin_back(p, &self.layout.head, &pass.z, dlogits, t * s, grad);
        let dy = norm_back(p, &self.layout.char_ln, &pass.char_ln, &dz, h, grad);
        let dchar = stack_backward(p, &self.layout.char_blocks, &pass.char_caches, dy, t, s, h, heads, grad);
        let mut dh = vec![0.0; t * h];
        for i in 0..t {
            for j in 0..s {
                let row = &dchar[(i * s + j) * h..(i * s + j + 1) * h];
                let cp = self.layout.char_pos + j * h;
                grad[cp..cp + h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                if j == 0 {
                    dh[i * h..(i + 1) * h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                } else {
                    let e = self.layout.char_embed + targets[i][j - 1] as usize * h;
                    grad[e..e + h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
        }
        let dx = norm_back(p, &self.layout.patch_ln, &pass.patch_ln, &dh, h, grad);
        let de = stack_backward(p, &self.layout.patch_blocks, &pass.patch_caches, dx, 1, t, h, heads, grad);
        let pe = self.layout.patch_embed;
        for (i, patch) in inputs.iter().enumerate() {
            let row = &de[i * h..(i + 1) * h];
            grad[pe.b..pe.b + h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            let pp = self.layout.patch_pos + i * h;
            grad[pp..pp + h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            for (k, &code) in patch.iter().enumerate() {
                let w = pe.w + (k * v + code as usize) * h;
                grad[w..w + h].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
    }

    /// Logits for `targets[t]` given `inputs[..=t]`, teacher-forced on the
    /// target's own earlier characters.
    pub fn forward(&self, inputs: &[Vec<u16>], targets: &[Vec<u16>]) -> Result<Logits, ModelError> {
        if inputs.len() != targets.len() {
            return Err(ModelError::BadConfig("inputs and targets differ in length".into()));
        }
        let pass = self.run(inputs, targets)?;
        Ok(Logits {
            patches: pass.t,
            patch_size: self.config.patch_size,
            vocab: self.config.char_vocab,
            data: pass.logits,
        })
    }

    /// Σ log p over the scored characters of one window that fits the
    /// context. Targets are `patches[1..]`; those at patch index
    /// `first_scored` or later count. With `grad`, adds `weight ·` the
    /// gradient of that sum.
    fn score_window(
        &self,
        patches: &[Vec<u16>],
        first_scored: usize,
        weight: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<(f64, usize), ModelError> {
        if patches.len() < 2 || first_scored >= patches.len() {
            return Ok((0.0, 0));
        }
        let c = &self.config;
        let (s, v) = (c.patch_size, c.char_vocab);
        let inputs = &patches[..patches.len() - 1];
        let targets = &patches[1..];
        let pass = self.run(inputs, targets)?;
        let want_grad = grad.is_some();
        let mut dlogits = if want_grad { vec![0.0; pass.logits.len()] } else { Vec::new() };
        let mut total = 0.0;
        let mut count = 0;
        let mut row = vec![0.0; v];
        for (i, tgt) in targets.iter().enumerate() {
            if i + 1 < first_scored {
                continue;
            }
            for (j, &code) in tgt.iter().enumerate().take(scored_positions(tgt, c.pad())) {
                let o = (i * s + j) * v;
                row.copy_from_slice(&pass.logits[o..o + v]);
                let lse = softmax_in_place(&mut row);
                total += pass.logits[o + code as usize] - lse;
                count += 1;
                if want_grad {
                    let d = &mut dlogits[o..o + v];
                    for (dd, pr) in d.iter_mut().zip(&row) {
                        *dd = -weight * pr;
                    }
                    d[code as usize] += weight;
                }
            }
        }
        if let Some(g) = grad {
            self.backward(&pass, inputs, targets, &dlogits, g);
        }
        Ok((total, count))
    }

    /// Windows of at most `context_patches` inputs with 50% overlap; every
    /// target is scored in exactly one window, the first where it is not in
    /// the leading half (except in the first window).
    fn windows(&self, n: usize) -> Vec<(usize, usize, usize)> {
        let ctx = self.config.context_patches;
        let mut out = Vec::new();
        if n < 2 {
            return out;
        }
        if n - 1 <= ctx {
            out.push((0, n, 1));
            return out;
        }
        let stride = (ctx / 2).max(1);
        let mut start = 0;
        let mut done = 0; // targets with index <= done are scored
        loop {
            let end = (start + ctx + 1).min(n);
            out.push((start, end, done + 1));
            done = end - 1;
            if end == n {
                break;
            }
            start += stride;
        }
        out
    }

    /// Σ log p over scored characters of a sequence of any length. Windowing
    /// kicks in only when `windowed` is set; otherwise an overlong sequence
    /// is a [`ModelError::ContextOverflow`].
    pub fn score(
        &self,
        seq: &ScoredSeq,
        weight: f64,
        windowed: bool,
        mut grad: Option<&mut [f64]>,
    ) -> Result<(f64, usize), ModelError> {
        let n = seq.patches.len();
        if !windowed && n > 1 && n - 1 > self.config.context_patches {
            return Err(ModelError::ContextOverflow {
                len: n - 1,
                max: self.config.context_patches,
            });
        }
        let mut total = 0.0;
        let mut count = 0;
        for (start, end, from) in self.windows(n) {
            let first = from.max(seq.first_scored);
            if first >= end {
                continue;
            }
            let (lp, k) = self.score_window(&seq.patches[start..end], first - start, weight, grad.as_deref_mut())?;
            total += lp;
            count += k;
        }
        Ok((total, count))
    }

    /// Number of characters [`Policy::score`] would count.
    pub fn scored_count(&self, seq: &ScoredSeq) -> usize {
        seq.patches
            .iter()
            .enumerate()
            .skip(seq.first_scored.max(1))
            .map(|(_, p)| scored_positions(p, self.config.pad()))
            .sum()
    }

    /// Evaluates `Σ weight_i · log p(seq_i)` and its gradient. Jobs run on up
    /// to `workers` threads; per-job gradients are summed in job order, so the
    /// result does not depend on the worker count.
    pub fn accumulate(&self, jobs: &[ScoreJob<'_>], workers: usize) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut grad = vec![0.0; self.layout.total];
        let mut values = Vec::with_capacity(jobs.len());
        for wave in jobs.chunks(workers.max(1)) {
            let results: Vec<Result<(f64, Vec<f64>), ModelError>> = if wave.len() == 1 {
                vec![self.job_grad(&wave[0])]
            } else {
                std::thread::scope(|sc| {
                    let handles: Vec<_> = wave.iter().map(|job| sc.spawn(move || self.job_grad(job))).collect();
                    handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
                })
            };
            for r in results {
                let (lp, g) = r?;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                values.push(lp);
            }
        }
        Ok((values, grad))
    }

    fn job_grad(&self, job: &ScoreJob<'_>) -> Result<(f64, Vec<f64>), ModelError> {
        let mut g = vec![0.0; self.layout.total];
        let (lp, _) = self.score(job.seq, job.weight, true, Some(&mut g))?;
        Ok((lp, g))
    }

    /// Log-probabilities of many sequences, computed in parallel.
    pub fn score_many(&self, seqs: &[ScoredSeq], workers: usize) -> Result<Vec<f64>, ModelError> {
        let workers = workers.max(1);
        let mut out = Vec::with_capacity(seqs.len());
        for wave in seqs.chunks(workers) {
            let results: Vec<Result<(f64, usize), ModelError>> = std::thread::scope(|sc| {
                let handles: Vec<_> = wave.iter().map(|s| sc.spawn(move || self.score(s, 1.0, true, None))).collect();
                handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
            });
            for r in results {
                out.push(r?.0);
            }
        }
        Ok(out)
    }

    /// Mean negative log-likelihood per scored character over a batch.
    pub fn nll_loss(&self, batch: &[ScoredSeq]) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut total = 0.0;
        let mut count = 0;
        for seq in batch {
            let (lp, k) = self.score(seq, 1.0, true, None)?;
            total += lp;
            count += k;
        }
        Ok(if count == 0 { 0.0 } else { -total / count as f64 })
    }

    /// Loss as in [`Policy::nll_loss`] together with its gradient.
    pub fn nll_loss_and_grad(&self, batch: &[ScoredSeq], workers: usize) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let count: usize = batch.iter().map(|s| self.scored_count(s)).sum();
        let w = if count == 0 { 0.0 } else { -1.0 / count as f64 };
        let jobs: Vec<ScoreJob> = batch.iter().map(|seq| ScoreJob { seq, weight: w }).collect();
        let (values, grad) = self.accumulate(&jobs, workers)?;
        let loss = if count == 0 { 0.0 } else { -values.iter().sum::<f64>() / count as f64 };
        Ok((loss, grad))
    }

    /// Maps text patches onto this model's code space.
    pub fn encode_patches(&self, ps: &patching::PatchSequence) -> Result<Vec<Vec<u16>>, ModelError> {
        let c = &self.config;
        let mut out = Vec::with_capacity(ps.len());
        for p in &ps.patches {
            if p.chars.len() != c.patch_size {
                return Err(ModelError::BadPatchLength {
                    found: p.chars.len(),
                    expected: c.patch_size,
                });
            }
            let mut codes = Vec::with_capacity(p.chars.len());
            for &ch in &p.chars {
                let code = match ch {
                    patching::PAD => c.pad(),
                    patching::BOS => c.bos(),
                    patching::EOS => c.eos(),
                    b if b < c.pad() => b,
                    b => return Err(ModelError::CodeOutOfRange { code: b, vocab: c.char_vocab }),
                };
                codes.push(code);
            }
            out.push(codes);
        }
        Ok(out)
    }

    /// BOS, prompt patches, then piece patches; only the piece is scored and
    /// no EOS is appended, so scores of consecutive line-aligned pieces add up.
    pub fn encode_scored(&self, prompt: &str, piece: &str) -> Result<ScoredSeq, ModelError> {
        let s = self.config.patch_size;
        let prompt_units = patching::segment_units(prompt);
        let mut units = prompt_units.clone();
        units.extend(patching::segment_units(piece));
        let ps = patching::to_patches(&units, s)?;
        let first_scored = ps
            .source_spans
            .iter()
            .position(|sp| matches!(sp, Some(sp) if sp.unit >= prompt_units.len()))
            .unwrap_or(ps.len());
        let mut patches = self.encode_patches(&ps)?;
        patches.pop();
        Ok(ScoredSeq::new(patches, first_scored))
    }

    /// `log π(piece | prompt)`: summed over the piece's characters, including
    /// each patch's end marker, with the prompt conditioned on but unscored.
    pub fn sequence_log_prob(&self, prompt: &str, piece: &str, windowed: bool) -> Result<f64, ModelError> {
        let seq = self.encode_scored(prompt, piece)?;
        Ok(self.score(&seq, 1.0, windowed, None)?.0)
    }

    /// Hidden state of the last patch of a cached patch-level prefix.
    pub(crate) fn patch_step(&self, patch: &[u16], kv: &mut KvCache) -> Result<Vec<f64>, ModelError> {
        self.check_patch(patch)?;
        let h = self.config.hidden;
        let pos = kv.len(h);
        if pos >= self.config.context_patches {
            return Err(ModelError::ContextOverflow {
                len: pos + 1,
                max: self.config.context_patches,
            });
        }
        let mut x = vec![0.0; h];
        self.embed_patch(patch, pos, &mut x);
        let y = stack_step(&self.params, &self.layout.patch_blocks, &x, h, self.config.heads, kv);
        Ok(norm(&self.params, &self.layout.patch_ln, &y, h).0)
    }

    /// Logits for character `pos` of the next patch.
    pub(crate) fn char_step(&self, hpatch: &[f64], prev: Option<u16>, pos: usize, kv: &mut KvCache) -> Vec<f64> {
        let h = self.config.hidden;
        let mut x = vec![0.0; h];
        self.char_input(hpatch, prev, pos, &mut x);
        let y = stack_step(&self.params, &self.layout.char_blocks, &x, h, self.config.heads, kv);
        let z = norm(&self.params, &self.layout.char_ln, &y, h).0;
        lin(&self.params, &self.layout.head, &z, 1)
    }
}

#[cfg(test)]
mod tests;

