use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;

/// V=6: byte codes 0..=2, PAD 3, BOS 4, EOS 5.
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_layers: 1,
        char_layers: 1,
        hidden: 4,
        heads: 2,
        context_patches: 4,
        patch_size: 4,
        char_vocab: 6,
        seed: 3,
    }
}

/// Larger weights than the default init so gradients are well above the
/// finite-difference noise floor.
fn tiny_policy() -> Policy {
    let mut p = Policy::new(tiny_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = Normal::new(0.0, 0.4).unwrap();
    for x in p.params.iter_mut() {
        *x += n.sample(&mut rng);
    }
    p
}

fn tiny_seq() -> ScoredSeq {
    ScoredSeq::new(
        vec![vec![4, 3, 3, 3], vec![0, 1, 3, 3], vec![2, 2, 1, 0], vec![1, 3, 3, 3], vec![5, 3, 3, 3]],
        1,
    )
}

#[test]
fn parameter_count_is_config_function() {
    let p = Policy::new(tiny_config()).unwrap();
    assert_eq!(p.num_params(), 690);
    assert_eq!(Policy::new(tiny_config()).unwrap().params, p.params);
    let desk = Layout::new(&ModelConfig::desk());
    assert_eq!(desk.tensors.last().unwrap().offset + desk.tensors.last().unwrap().len(), desk.total);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut p = tiny_policy();
    let batch = vec![tiny_seq(), ScoredSeq::new(vec![vec![4, 3, 3, 3], vec![2, 0, 0, 1], vec![5, 3, 3, 3]], 1)];
    let (_, grad) = p.nll_loss_and_grad(&batch, 1).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.num_params() {
        let orig = p.params[i];
        p.params[i] = orig + h;
        let up = p.nll_loss(&batch).unwrap();
        p.params[i] = orig - h;
        let down = p.nll_loss(&batch).unwrap();
        p.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn zero_head_gives_log_vocab() {
    let mut p = tiny_policy();
    let head = p.layout.head;
    p.params[head.w..head.b + head.n_out].iter_mut().for_each(|x| *x = 0.0);
    let loss = p.nll_loss(&[tiny_seq()]).unwrap();
    assert!((loss - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_matches_manual_softmax() {
    let p = tiny_policy();
    // BOS then one patch "0" + PAD end marker: two scored positions.
    let seq = ScoredSeq::new(vec![vec![4, 3, 3, 3], vec![0, 3, 3, 3]], 1);
    let logits = p.forward(&seq.patches[..1], &seq.patches[1..]).unwrap();
    let mut manual = 0.0;
    for (pos, target) in [(0, 0usize), (1, 3usize)] {
        let row = logits.at(0, pos);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        manual -= (row[target].exp() / z).ln();
    }
    manual /= 2.0;
    assert!((p.nll_loss(&[seq]).unwrap() - manual).abs() < 1e-12);
}

#[test]
fn pad_targets_after_end_marker_are_ignored() {
    let p = tiny_policy();
    let a = p.nll_loss(&[tiny_seq()]).unwrap();
    // Only the final patch is a pure target; earlier ones are also inputs.
    let mut seq = tiny_seq();
    seq.patches[4][2] = 0;
    seq.patches[4][3] = 2;
    assert_eq!(a, p.nll_loss(&[seq]).unwrap());
    let mut short = ScoredSeq::new(tiny_seq().patches[..2].to_vec(), 1);
    let c = p.nll_loss(&[short.clone()]).unwrap();
    short.patches[1][3] = 1;
    assert_eq!(c, p.nll_loss(&[short]).unwrap());
}

#[test]
fn causal_at_both_levels() {
    let p = tiny_policy();
    let s = tiny_seq();
    let inputs = &s.patches[..4];
    let targets = &s.patches[1..];
    let base = p.forward(inputs, targets).unwrap();
    let mut inputs2 = inputs.to_vec();
    let mut targets2 = targets.to_vec();
    inputs2.swap(2, 3);
    targets2.swap(2, 3);
    let other = p.forward(&inputs2, &targets2).unwrap();
    for pos in 0..4 {
        assert_eq!(base.at(0, pos), other.at(0, pos));
        assert_eq!(base.at(1, pos), other.at(1, pos));
    }
    // Changing a later char of a target patch leaves earlier positions alone.
    let mut targets3 = targets.to_vec();
    targets3[1][2] = 0;
    let third = p.forward(inputs, &targets3).unwrap();
    for pos in 0..3 {
        assert_eq!(base.at(1, pos), third.at(1, pos));
    }
    assert_ne!(base.at(1, 3), third.at(1, 3));
}

#[test]
fn forward_is_deterministic_and_checks_context() {
    let p = tiny_policy();
    let bos = vec![vec![4u16, 3, 3, 3]];
    let tgt = vec![vec![0u16, 1, 3, 3]];
    let a = p.forward(&bos, &tgt).unwrap();
    assert_eq!(a.data.len(), 4 * 6);
    assert!(a.data.iter().all(|v| v.is_finite()));
    assert_eq!(a, p.forward(&bos, &tgt).unwrap());
    let long = vec![vec![0u16, 3, 3, 3]; 5];
    assert!(matches!(
        p.forward(&long, &long),
        Err(ModelError::ContextOverflow { len: 5, max: 4 })
    ));
}

#[test]
fn lr_zero_keeps_parameters() {
    let mut p = tiny_policy();
    let before = p.params.clone();
    let mut opt = AdamW::new(&p, AdamWConfig::default());
    train_step(&mut p, &[tiny_seq()], &mut opt, 0.0, 1).unwrap();
    assert_eq!(p.params, before);
    train_step(&mut p, &[tiny_seq()], &mut opt, 1e-2, 1).unwrap();
    assert_ne!(p.params, before);
}

#[test]
fn non_finite_gradient_is_rejected() {
    let mut p = tiny_policy();
    let mut opt = AdamW::new(&p, AdamWConfig::default());
    let mut g = vec![0.0; p.num_params()];
    g[7] = f64::NAN;
    let before = p.params.clone();
    assert!(matches!(opt.update(&mut p.params, &g, 0.1), Err(ModelError::NonFiniteGradient)));
    assert_eq!(p.params, before);
    assert_eq!(opt.step, 0);
}

#[test]
fn warmup_is_linear() {
    let s = WarmupSchedule {
        base_lr: 1e-3,
        warmup_steps: 4,
    };
    assert_eq!([s.lr(1), s.lr(2), s.lr(4), s.lr(9)], [2.5e-4, 5e-4, 1e-3, 1e-3]);
}

#[test]
fn windowed_scoring_covers_each_target_once() {
    let p = tiny_policy();
    let mut patches = vec![vec![4u16, 3, 3, 3]];
    for i in 0..9u16 {
        patches.push(vec![i % 3, (i + 1) % 3, 3, 3]);
    }
    let seq = ScoredSeq::new(patches, 1);
    assert!(matches!(p.score(&seq, 1.0, false, None), Err(ModelError::ContextOverflow { .. })));
    let (lp, count) = p.score(&seq, 1.0, true, None).unwrap();
    assert_eq!(count, p.scored_count(&seq));
    assert!(lp < 0.0);
    // A sequence that fits scores identically either way.
    let short = ScoredSeq::new(seq.patches[..4].to_vec(), 2);
    assert_eq!(p.score(&short, 1.0, true, None).unwrap(), p.score(&short, 1.0, false, None).unwrap());
}

#[test]
fn windowed_gradient_matches_finite_differences() {
    let mut p = tiny_policy();
    let mut patches = vec![vec![4u16, 3, 3, 3]];
    for i in 0..7u16 {
        patches.push(vec![(i * 2) % 3, i % 3, 3, 3]);
    }
    let seq = ScoredSeq::new(patches, 3);
    let mut grad = vec![0.0; p.num_params()];
    p.score(&seq, 1.0, true, Some(&mut grad)).unwrap();
    let h = 1e-5;
    for i in (0..p.num_params()).step_by(7) {
        let orig = p.params[i];
        p.params[i] = orig + h;
        let up = p.score(&seq, 1.0, true, None).unwrap().0;
        p.params[i] = orig - h;
        let down = p.score(&seq, 1.0, true, None).unwrap().0;
        p.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        // The summed score is O(10), so central differences carry ~1e-9 noise.
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-5);
        assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
    }
}

#[test]
fn parallel_accumulation_is_bitwise_stable() {
    let p = tiny_policy();
    let seqs = vec![tiny_seq(), ScoredSeq::new(tiny_seq().patches[..3].to_vec(), 1), tiny_seq()];
    let jobs: Vec<ScoreJob> = seqs
        .iter()
        .zip([0.5, -1.0, 2.0])
        .map(|(seq, weight)| ScoreJob { seq, weight })
        .collect();
    let one = p.accumulate(&jobs, 1).unwrap();
    let three = p.accumulate(&jobs, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(p.score_many(&seqs, 2).unwrap(), one.0);
}

fn text_policy() -> Policy {
    Policy::new(ModelConfig {
        patch_layers: 1,
        char_layers: 1,
        hidden: 8,
        heads: 2,
        context_patches: 16,
        patch_size: 8,
        char_vocab: 259,
        seed: 5,
    })
    .unwrap()
}

#[test]
fn sequence_log_prob_chain_rule() {
    let p = text_policy();
    let prompt = "%%prompt Baroque|Bach|Keyboard\n";
    let a = "X:1\nL:1/8\nK:C\n";
    let b = "[r:1/1][V:1]CDEF|\n[r:2/0][V:1]GABc|\n";
    assert_eq!(p.sequence_log_prob(prompt, "", false).unwrap(), 0.0);
    let whole = p.sequence_log_prob(prompt, &format!("{a}{b}"), false).unwrap();
    let first = p.sequence_log_prob(prompt, a, false).unwrap();
    let second = p.sequence_log_prob(&format!("{prompt}{a}"), b, false).unwrap();
    assert!((whole - (first + second)).abs() < 1e-9, "{whole} vs {}", first + second);
}

#[test]
fn uniform_model_scores_log_vocab_per_char() {
    let mut p = text_policy();
    let head = p.layout.head;
    p.params[head.w..head.b + head.n_out].iter_mut().for_each(|x| *x = 0.0);
    let piece = "X:1\nK:C\nCDEFGABc|\n";
    // Units "X:1\n", "K:C\n", "CDEFGABc|\n": 4+1, 4+1, 8 + 2+1 scored chars.
    let n = 5 + 5 + 8 + 3;
    let lp = p.sequence_log_prob("", piece, false).unwrap();
    assert!((lp + n as f64 * 259f64.ln()).abs() < 1e-9);
}

#[test]
fn cached_steps_match_full_forward() {
    let p = text_policy();
    let seq = p.encode_scored("", "X:1\nK:C\nCDEF|GABc|\n").unwrap();
    let inputs = &seq.patches[..seq.patches.len() - 1];
    let targets = &seq.patches[1..];
    let full = p.forward(inputs, targets).unwrap();
    let mut kv = KvCache::new(1);
    for (t, input) in inputs.iter().enumerate() {
        let hidden = p.patch_step(input, &mut kv).unwrap();
        let mut ckv = KvCache::new(1);
        let mut prev = None;
        for j in 0..p.config.patch_size {
            let l = p.char_step(&hidden, prev, j, &mut ckv);
            for (a, b) in l.iter().zip(full.at(t, j)) {
                assert!((a - b).abs() < 1e-10);
            }
            prev = Some(targets[t][j]);
        }
    }
}

#[test]
fn generation_is_seeded() {
    let p = text_policy();
    let cfg = SamplingConfig {
        max_new_patches: 40,
        seed: 9,
        ..SamplingConfig::default()
    };
    let a = generate(&p, "%%prompt Baroque|Bach|Keyboard\n", &cfg);
    let b = generate(&p, "%%prompt Baroque|Bach|Keyboard\n", &cfg);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            assert_eq!(a, b);
            assert!(a.starts_with("%%prompt Baroque|Bach|Keyboard\n"));
        }
        (Err(ModelError::MaxLengthExceeded { limit: 40 }), Err(ModelError::MaxLengthExceeded { .. })) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut p = tiny_policy();
    let mut opt = AdamW::new(&p, AdamWConfig::default());
    train_step(&mut p, &[tiny_seq()], &mut opt, 1e-2, 1).unwrap();
    let ck = Checkpoint {
        policy: p.clone(),
        optimizer: Some(opt.clone()),
    };
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back.policy.params, p.params);
    assert_eq!(back.policy.config, p.config);
    assert_eq!(back.optimizer.unwrap(), opt);
    let mut bytes = ck.to_bytes();
    bytes.pop();
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}

#[test]
fn config_text_round_trip() {
    let c = tiny_config();
    assert_eq!(c.to_string().parse::<ModelConfig>().unwrap(), c);
    assert!("hidden=6\nheads=4".parse::<ModelConfig>().is_err());
}

#[test]
fn training_log_round_trip() {
    let recs = vec![
        TrainRecord { step: 1, loss: 5.5, lr: 1e-4 },
        TrainRecord { step: 2, loss: 5.25, lr: 2e-4 },
    ];
    assert_eq!(read_training_log(&write_training_log(&recs)).unwrap(), recs);
}

#[test]
fn segment_encoding_masks_context_and_eos() {
    let p = Policy::new(ModelConfig { context_patches: 8, ..ModelConfig::desk() }).unwrap();
    let text = "%%prompt a|b|c\nX:1\nK:C\n[r:5/3]CD|\n[r:6/2]EF|\n";
    let whole = encode_segment(&p, text, true, true).unwrap();
    assert_eq!(whole, encode_training_text(&p, text).unwrap());
    assert_eq!((whole.patches.len(), whole.first_scored), (7, 1));
    let inner = encode_segment(&p, text, false, false).unwrap();
    assert_eq!(inner.patches[..], whole.patches[..6]);
    // BOS, prompt, X, K and the first body line are context.
    assert_eq!(inner.first_scored, 5);
    assert!(p.nll_loss(&[inner]).unwrap().is_finite());
}
