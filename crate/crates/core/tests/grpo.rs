mod common;

use agentseg_core::grpo::{clipped_term, Aggregation, RatioMode, DEFAULT_STD_FLOOR};
use agentseg_core::trajectory::TurnKind;
use agentseg_core::{
    apply_info_mask, clipped_objective, compute_advantages, parse_trajectory, Mode, ObjectiveConfig,
    RolloutGroup, TokenLayout, TokenSequence,
};
use proptest::prelude::*;

use common::valid_rollout;

fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Straight-line PPO surrogate written out branch by branch.
fn oracle_objective(group: &RolloutGroup, adv: &[f64], eps: f64, ratio_mode: RatioMode) -> f64 {
    let mut total = 0.0;
    for (seq, &a) in group.sequences.iter().zip(adv) {
        let idx: Vec<usize> = (0..seq.loss_mask.len()).filter(|&t| seq.loss_mask[t]).collect();
        let term = |r: f64| {
            let clipped = if r > 1.0 + eps {
                1.0 + eps
            } else if r < 1.0 - eps {
                1.0 - eps
            } else {
                r
            };
            let (x, y) = (r * a, clipped * a);
            if x < y {
                x
            } else {
                y
            }
        };
        total += match ratio_mode {
            RatioMode::Token => {
                idx.iter()
                    .map(|&t| term((seq.logprob_new[t] - seq.logprob_old[t]).exp()))
                    .sum::<f64>()
                    / idx.len() as f64
            }
            RatioMode::Sequence => {
                let lr: f64 = idx.iter().map(|&t| seq.logprob_new[t] - seq.logprob_old[t]).sum();
                term(lr.exp())
            }
        };
    }
    total / group.len() as f64
}

fn sequence() -> impl Strategy<Value = TokenSequence> {
    (1usize..24).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..0.0, n),
            prop::collection::vec(-0.4f64..0.4, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(old, delta, mut mask, forced)| {
                mask[forced] = true;
                let new = old.iter().zip(&delta).map(|(o, d)| o + d).collect();
                TokenSequence::new(new, old, mask)
            })
    })
}

fn group() -> impl Strategy<Value = RolloutGroup> {
    (2usize..9).prop_flat_map(|g| {
        (prop::collection::vec(sequence(), g), prop::collection::vec(0.0f64..5.0, g))
            .prop_map(|(seqs, rewards)| RolloutGroup::new(seqs, rewards).unwrap())
    })
}

#[test]
fn advantage_example() {
    let adv = compute_advantages(&[1.0, 2.0, 3.0], DEFAULT_STD_FLOOR).unwrap();
    let s = (1.5f64).sqrt();
    assert!((adv.advantages[0] + s).abs() < 1e-12);
    assert_eq!(adv.advantages[1], 0.0);
    assert!((adv.advantages[2] - s).abs() < 1e-12);
    assert!(!adv.degenerate);
}

#[test]
fn constant_rewards_are_degenerate() {
    let adv = compute_advantages(&[4.0; 5], DEFAULT_STD_FLOOR).unwrap();
    assert!(adv.degenerate);
    assert_eq!(adv.advantages, vec![0.0; 5]);
    assert!(compute_advantages(&[1.0], DEFAULT_STD_FLOOR).is_err());
}

#[test]
fn clip_branches() {
    let eps = 0.2;
    assert!((clipped_term(1.5, 1.0, eps) - 1.2).abs() < 1e-12);
    assert!((clipped_term(0.5, 1.0, eps) - 0.5).abs() < 1e-12);
    assert!((clipped_term(0.5, -1.0, eps) + 0.8).abs() < 1e-12);
    assert!((clipped_term(1.5, -1.0, eps) + 1.5).abs() < 1e-12);
    assert!((clipped_term(1.1, 2.0, eps) - 2.2).abs() < 1e-12);
}

#[test]
fn info_mask_blanks_prompt_and_information() {
    let text = "<think>a</think><search>{\"name\": \"text_search\", \"query\": \"q\"}</search><information>docs</information><think>b</think>";
    let t = parse_trajectory(text, Mode::Video);
    let layout = TokenLayout {
        prompt_len: 3,
        turn_spans: vec![3..5, 5..8, 8..12, 12..14],
    };
    let mask = apply_info_mask(&t, &layout).unwrap();
    let want: Vec<bool> = (0..14).map(|i| (3..8).contains(&i) || i >= 12).collect();
    assert_eq!(mask, want);

    let gap = TokenLayout {
        prompt_len: 3,
        turn_spans: vec![3..5, 6..8, 8..12, 12..14],
    };
    assert!(apply_info_mask(&t, &gap).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn advantages_are_standardised(rewards in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        let adv = compute_advantages(&rewards, DEFAULT_STD_FLOOR).unwrap();
        let (_, std) = population_stats(&rewards);
        if std < DEFAULT_STD_FLOOR {
            prop_assert!(adv.degenerate);
        } else {
            let (m, s) = population_stats(&adv.advantages);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn advantages_ignore_affine_reward_change(
        rewards in prop::collection::vec(-10.0f64..10.0, 2..16),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let (_, std) = population_stats(&rewards);
        prop_assume!(std > 1e-3);
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let a = compute_advantages(&rewards, DEFAULT_STD_FLOOR).unwrap();
        let b = compute_advantages(&moved, DEFAULT_STD_FLOOR).unwrap();
        for (x, y) in a.advantages.iter().zip(&b.advantages) {
            prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn objective_matches_oracle(g in group(), eps in 0.05f64..0.5, sequence_ratio in any::<bool>()) {
        let adv = compute_advantages(&g.rewards, DEFAULT_STD_FLOOR).unwrap();
        let ratio_mode = if sequence_ratio { RatioMode::Sequence } else { RatioMode::Token };
        let cfg = ObjectiveConfig { epsilon: eps, ratio_mode, ..ObjectiveConfig::default() };
        let got = clipped_objective(&g, &adv, &cfg).unwrap();
        let want = oracle_objective(&g, &adv.advantages, eps, ratio_mode);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn masked_tokens_do_not_matter(g in group(), noise in prop::collection::vec(-50.0f64..50.0, 32)) {
        let adv = compute_advantages(&g.rewards, DEFAULT_STD_FLOOR).unwrap();
        let base = clipped_objective(&g, &adv, &ObjectiveConfig::default()).unwrap();
        let mut moved = g.clone();
        for seq in &mut moved.sequences {
            for t in 0..seq.loss_mask.len() {
                if !seq.loss_mask[t] {
                    seq.logprob_new[t] += noise[t % noise.len()];
                    seq.logprob_old[t] -= noise[(t + 7) % noise.len()];
                }
            }
        }
        let after = clipped_objective(&moved, &adv, &ObjectiveConfig::default()).unwrap();
        prop_assert_eq!(base, after);
    }

    #[test]
    fn unit_ratio_gives_mean_advantage(g in group(), group_tokens in any::<bool>()) {
        let mut g = g;
        for seq in &mut g.sequences {
            seq.logprob_new = seq.logprob_old.clone();
        }
        let adv = compute_advantages(&g.rewards, DEFAULT_STD_FLOOR).unwrap();
        let aggregation = if group_tokens { Aggregation::GroupTokenMean } else { Aggregation::SequenceMean };
        let cfg = ObjectiveConfig { aggregation, ..ObjectiveConfig::default() };
        let got = clipped_objective(&g, &adv, &cfg).unwrap();
        let want = if group_tokens {
            let counts: Vec<f64> = g.sequences.iter().map(|s| s.loss_mask.iter().filter(|m| **m).count() as f64).collect();
            adv.advantages.iter().zip(&counts).map(|(a, n)| a * n).sum::<f64>() / counts.iter().sum::<f64>()
        } else {
            adv.advantages.iter().sum::<f64>() / adv.advantages.len() as f64
        };
        prop_assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn clipped_term_is_pessimistic(r in 0.0f64..5.0, a in -5.0f64..5.0, eps in 0.01f64..0.99) {
        let v = clipped_term(r, a, eps);
        prop_assert!(v <= r * a + 1e-12);
        let bound = if a >= 0.0 { (1.0 + eps) * a } else { (1.0 - eps) * a };
        prop_assert!(v <= bound + 1e-12);
    }

    #[test]
    fn info_mask_tracks_turn_kinds(text in valid_rollout(), prompt_len in 0usize..6, lens in prop::collection::vec(0usize..5, 40)) {
        let t = parse_trajectory(&text, Mode::Video);
        let mut cursor = prompt_len;
        let spans: Vec<_> = (0..t.turns.len()).map(|i| {
            let s = cursor..cursor + lens[i % lens.len()];
            cursor = s.end;
            s
        }).collect();
        let layout = TokenLayout { prompt_len, turn_spans: spans.clone() };
        let mask = apply_info_mask(&t, &layout).unwrap();
        prop_assert_eq!(mask.len(), cursor);
        prop_assert!(mask[..prompt_len].iter().all(|m| !m));
        for (turn, span) in t.turns.iter().zip(&spans) {
            let want = turn.kind() != TurnKind::Information;
            prop_assert!(mask[span.clone()].iter().all(|m| *m == want));
        }
    }
}
