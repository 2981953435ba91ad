use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KvCache, ModelError, Policy};
use crate::patching;
use crate::preprocess::parse_bar_label;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    /// Values at or below 1e-8 decode greedily.
    pub temperature: f64,
    pub top_p: f64,
    /// Hard cap on sampled patches, across continuations.
    pub max_new_patches: usize,
    pub seed: u64,
    /// Fraction of the context that triggers a continuation window.
    pub continuation_threshold: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            top_p: 0.9,
            max_new_patches: 4096,
            seed: 0,
            continuation_threshold: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Eos,
    Countdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerateStats {
    pub patches: usize,
    pub continuations: usize,
    pub termination: Termination,
}

/// Countdown value of a line's `[r:k/m]` label.
pub fn countdown_of(line: &str) -> Option<usize> {
    parse_bar_label(line).map(|(_, m, _)| m)
}

fn sample_code(logits: &mut [f64], cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> u16 {
    if cfg.temperature <= 1e-8 {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best as u16;
    }
    for l in logits.iter_mut() {
        *l /= cfg.temperature;
    }
    super::ops::softmax_in_place(logits);
    let mut idx: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] > 0.0).collect();
    idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    let mut keep = idx.len();
    let mut cum = 0.0;
    for (n, &i) in idx.iter().enumerate() {
        cum += logits[i];
        if cum >= cfg.top_p {
            keep = n + 1;
            break;
        }
    }
    let kept = &idx[..keep];
    let mass: f64 = kept.iter().map(|&i| logits[i]).sum();
    let mut r = rng.gen::<f64>() * mass;
    for &i in kept {
        r -= logits[i];
        if r <= 0.0 {
            return i as u16;
        }
    }
    kept[keep - 1] as u16
}

fn sample_patch(policy: &Policy, hidden: &[f64], cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let c = &policy.config;
    let (pad, bos, eos) = (c.pad(), c.bos(), c.eos());
    let mut kv = KvCache::new(c.char_layers);
    let mut codes = vec![pad; c.patch_size];
    let mut prev = None;
    for j in 0..c.patch_size {
        let mut logits = policy.char_step(hidden, prev, j, &mut kv);
        logits[bos as usize] = f64::NEG_INFINITY;
        if j == 0 {
            logits[pad as usize] = f64::NEG_INFINITY;
        } else {
            logits[eos as usize] = f64::NEG_INFINITY;
        }
        let code = sample_code(&mut logits, cfg, rng);
        codes[j] = code;
        if code == pad || code == eos {
            break;
        }
        prev = Some(code);
    }
    codes
}

struct GenPatch {
    codes: Vec<u16>,
    line: usize,
}

/// Builds the continuation context: prompt, generated header, the second
/// half of the body lines currently in context and the line in progress.
/// `from` is the first body line of the current window. Returns the context
/// and the first body line of the new window.
fn reseed(prompt: &[Vec<u16>], gen: &[GenPatch], text: &[u8], from: usize, limit: usize) -> (Vec<Vec<u16>>, usize) {
    let lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
    let current = lines.len() - 1;
    let header_end = lines.iter().position(|l| l.starts_with(b"K:")).map(|i| i + 1);
    let build = |keep: &dyn Fn(usize) -> bool| -> Vec<Vec<u16>> {
        let mut ctx = prompt.to_vec();
        ctx.extend(gen.iter().filter(|g| keep(g.line)).map(|g| g.codes.clone()));
        ctx
    };
    if let Some(h) = header_end.filter(|&h| h <= current) {
        let start = from.max(h).min(current);
        let mut first_kept = start + (current - start) / 2;
        loop {
            let ctx = build(&|l| l < h || l >= first_kept);
            if ctx.len() < limit {
                return (ctx, first_kept);
            }
            if first_kept >= current {
                break;
            }
            first_kept += 1;
        }
    }
    // Header alone does not fit: keep only the most recent patches.
    let room = (limit.saturating_sub(prompt.len()) / 2).max(1);
    let mut ctx = prompt.to_vec();
    let start = gen.len().saturating_sub(room);
    ctx.extend(gen[start..].iter().map(|g| g.codes.clone()));
    (ctx, current)
}

/// Samples a piece for `prompt`, returning the prompt followed by the
/// generated text.
pub fn generate(policy: &Policy, prompt: &str, cfg: &SamplingConfig) -> Result<String, ModelError> {
    generate_with_stats(policy, prompt, cfg).map(|(t, _)| t)
}

pub fn generate_with_stats(
    policy: &Policy,
    prompt: &str,
    cfg: &SamplingConfig,
) -> Result<(String, GenerateStats), ModelError> {
    let c = &policy.config;
    let ctx_max = c.context_patches;
    let ps = patching::tokenize(prompt, c.patch_size)?;
    let mut prompt_patches = policy.encode_patches(&ps)?;
    prompt_patches.pop();
    if prompt_patches.len() >= ctx_max {
        return Err(ModelError::ContextOverflow {
            len: prompt_patches.len(),
            max: ctx_max,
        });
    }
    let threshold = ((cfg.continuation_threshold * ctx_max as f64).ceil() as usize).clamp(1, ctx_max);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kv = KvCache::new(c.patch_layers);
    let mut ctx_len = 0;
    let mut hidden = Vec::new();
    for p in &prompt_patches {
        hidden = policy.patch_step(p, &mut kv)?;
        ctx_len += 1;
    }
    let mut gen: Vec<GenPatch> = Vec::new();
    let mut text: Vec<u8> = Vec::new();
    let mut continuations = 0;
    let mut window_from = 0;
    let termination;
    loop {
        if gen.len() >= cfg.max_new_patches {
            return Err(ModelError::MaxLengthExceeded {
                limit: cfg.max_new_patches,
            });
        }
        let patch = sample_patch(policy, &hidden, cfg, &mut rng);
        if patch[0] == c.eos() {
            termination = Termination::Eos;
            break;
        }
        let line = text.iter().filter(|&&b| b == b'\n').count();
        let mut finished = false;
        for &code in patch.iter().take_while(|&&x| x < c.pad()) {
            text.push(code as u8);
            if code == b'\n' as u16 {
                let start = text[..text.len() - 1].iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let done = String::from_utf8_lossy(&text[start..text.len() - 1]).into_owned();
                if countdown_of(&done) == Some(0) {
                    finished = true;
                    break;
                }
            }
        }
        gen.push(GenPatch { codes: patch, line });
        if finished {
            termination = Termination::Countdown;
            break;
        }
        let cur_start = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let countdown = countdown_of(&String::from_utf8_lossy(&text[cur_start..]));
        let last = &gen.last().unwrap().codes;
        if ctx_len + 1 >= ctx_max || (ctx_len + 1 >= threshold && countdown != Some(0)) {
            let (ctx, from) = reseed(&prompt_patches, &gen, &text, window_from, threshold.min(ctx_max - 1));
            window_from = from;
            continuations += 1;
            log::debug!("continuation window {continuations}: {} patches kept", ctx.len());
            kv.clear();
            ctx_len = 0;
            for p in &ctx {
                hidden = policy.patch_step(p, &mut kv)?;
                ctx_len += 1;
            }
        } else {
            hidden = policy.patch_step(last, &mut kv)?;
            ctx_len += 1;
        }
    }
    let mut out = prompt.to_string();
    out.push_str(&String::from_utf8_lossy(&text));
    Ok((
        out,
        GenerateStats {
            patches: gen.len(),
            continuations,
            termination,
        },
    ))
}
