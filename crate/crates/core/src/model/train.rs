use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamW, ModelError, Policy, ScoredSeq, WarmupSchedule};
use crate::patching;
use crate::preprocess::split_header_body;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 50,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Whole text as one training sequence, every patch after BOS scored,
/// EOS included.
pub fn encode_training_text(policy: &Policy, text: &str) -> Result<ScoredSeq, ModelError> {
    let ps = patching::tokenize(text, policy.config.patch_size)?;
    Ok(ScoredSeq::new(policy.encode_patches(&ps)?, 1))
}

/// A window cut from a longer piece. A window that stops before the end of
/// the piece gets no EOS. One that starts mid-piece treats its header and
/// first body line as context, since nothing before it says where the
/// window starts.
pub fn encode_segment(
    policy: &Policy,
    text: &str,
    starts_piece: bool,
    ends_piece: bool,
) -> Result<ScoredSeq, ModelError> {
    let mut seq = encode_training_text(policy, text)?;
    if !ends_piece {
        seq.patches.pop();
    }
    if !starts_piece {
        let (header, body) = split_header_body(text);
        if let Some(first) = body.first() {
            let context = header.concat() + first;
            // Drop the EOS patch: the next index is the second body line.
            seq.first_scored = patching::tokenize(&context, policy.config.patch_size)?.patches.len() - 1;
        }
    }
    Ok(seq)
}

/// Mean NLL of the batch and one optimizer update at rate `lr`.
pub fn train_step(
    policy: &mut Policy,
    batch: &[ScoredSeq],
    opt: &mut AdamW,
    lr: f64,
    workers: usize,
) -> Result<f64, ModelError> {
    let (loss, grad) = policy.nll_loss_and_grad(batch, workers)?;
    opt.update(&mut policy.params, &grad, lr)?;
    Ok(loss)
}

/// Shuffled-epoch minibatch training; `on_step` sees every record.
pub fn train(
    policy: &mut Policy,
    corpus: &[ScoredSeq],
    cfg: &TrainConfig,
    opt: &mut AdamW,
    mut on_step: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = WarmupSchedule {
        base_lr: cfg.lr,
        warmup_steps: cfg.warmup_steps,
    };
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.max(1) {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(corpus[order.pop().unwrap()].clone());
        }
        let lr = schedule.lr(step);
        let loss = train_step(policy, &batch, opt, lr, cfg.workers)?;
        let rec = TrainRecord { step, loss, lr };
        log::debug!("step {step} loss {loss:.5} lr {lr:.3e}");
        on_step(&rec);
        records.push(rec);
    }
    Ok(records)
}

pub fn write_training_log(records: &[TrainRecord]) -> String {
    let mut out = String::from("step\tloss\tlr\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.step, r.loss, r.lr);
    }
    out
}

pub fn read_training_log(text: &str) -> Result<Vec<TrainRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || ModelError::Checkpoint(format!("training log line {}: {line:?}", i + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(TrainRecord {
            step: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            lr: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
