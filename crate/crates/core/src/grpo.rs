//! Group-relative advantages and the clipped surrogate objective.
//!
//! Environment tokens (retrieved information, prompt) are excluded from the
//! objective through a per-token loss mask.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Trajectory, TurnKind};

pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("a group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("{rewards} rewards for {sequences} sequences")]
    RewardCount { rewards: usize, sequences: usize },
    #[error("sequence {0}: log-prob and mask arrays differ in length")]
    LengthMismatch(usize),
    #[error("sequence {0} has no unmasked tokens")]
    NoUnmaskedTokens(usize),
    #[error("sequence {0}: KL penalty enabled but no reference log-probs")]
    MissingReference(usize),
    #[error("sequence {0}: non-finite log-probability")]
    NonFinite(usize),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("std floor must be positive, got {0}")]
    StdFloor(f64),
    #[error("{turns} turns but {spans} token spans")]
    SpanCount { turns: usize, spans: usize },
    #[error("token span {index} ({span:?}) leaves a gap or overlaps its predecessor")]
    SpanLayout { index: usize, span: Range<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub logprob_new: Vec<f64>,
    pub logprob_old: Vec<f64>,
    /// `true` for policy-generated tokens, `false` for prompt and retrieved tokens.
    pub loss_mask: Vec<bool>,
    /// Reference-policy log-probs, only needed when the KL penalty is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_ref: Option<Vec<f64>>,
}

impl TokenSequence {
    pub fn new(logprob_new: Vec<f64>, logprob_old: Vec<f64>, loss_mask: Vec<bool>) -> Self {
        TokenSequence {
            logprob_new,
            logprob_old,
            loss_mask,
            logprob_ref: None,
        }
    }

    fn check(&self, index: usize) -> Result<usize, GrpoError> {
        let n = self.loss_mask.len();
        if self.logprob_new.len() != n
            || self.logprob_old.len() != n
            || self.logprob_ref.as_ref().is_some_and(|r| r.len() != n)
        {
            return Err(GrpoError::LengthMismatch(index));
        }
        let unmasked = self.loss_mask.iter().filter(|m| **m).count();
        if unmasked == 0 {
            return Err(GrpoError::NoUnmaskedTokens(index));
        }
        let finite = |v: &[f64]| {
            v.iter()
                .zip(&self.loss_mask)
                .all(|(x, m)| !*m || x.is_finite())
        };
        if !finite(&self.logprob_new)
            || !finite(&self.logprob_old)
            || self.logprob_ref.as_deref().is_some_and(|r| !finite(r))
        {
            return Err(GrpoError::NonFinite(index));
        }
        Ok(unmasked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub sequences: Vec<TokenSequence>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(sequences: Vec<TokenSequence>, rewards: Vec<f64>) -> Result<Self, GrpoError> {
        if rewards.len() != sequences.len() {
            return Err(GrpoError::RewardCount {
                rewards: rewards.len(),
                sequences: sequences.len(),
            });
        }
        Ok(RolloutGroup { sequences, rewards })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    /// Set when the reward spread fell below the std floor and every
    /// advantage was zeroed.
    pub degenerate: bool,
}

/// `A_i = (R_i - mean) / std` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<AdvantageSet, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if !(std_floor > 0.0) {
        return Err(GrpoError::StdFloor(std_floor));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(AdvantageSet {
            advantages: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    Ok(AdvantageSet {
        advantages: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

/// Whether importance ratios are taken per token or once per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    #[default]
    Token,
    /// `exp(sum of unmasked log-prob differences)`.
    Sequence,
}

/// How token terms are averaged (token ratio mode only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over each sequence's unmasked tokens, then mean over the group.
    #[default]
    SequenceMean,
    /// Sum over all unmasked tokens of the group divided by their count.
    GroupTokenMean,
}

macro_rules! impl_from_str {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    };
}

impl_from_str!(RatioMode, "token" => RatioMode::Token, "sequence" => RatioMode::Sequence);
impl_from_str!(Aggregation, "sequence_mean" => Aggregation::SequenceMean, "group_token_mean" => Aggregation::GroupTokenMean);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub epsilon: f64,
    pub ratio_mode: RatioMode,
    pub aggregation: Aggregation,
    /// KL penalty coefficient; `0` disables the term.
    pub kl_coef: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            epsilon: 0.2,
            ratio_mode: RatioMode::Token,
            aggregation: Aggregation::SequenceMean,
            kl_coef: 0.0,
        }
    }
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`
#[inline]
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Clipped surrogate objective (to be maximised), minus the optional KL penalty.
pub fn clipped_objective(
    group: &RolloutGroup,
    advantages: &AdvantageSet,
    cfg: &ObjectiveConfig,
) -> Result<f64, GrpoError> {
    let eps = cfg.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GrpoError::Epsilon(eps));
    }
    if group.len() < 2 {
        return Err(GrpoError::GroupTooSmall(group.len()));
    }
    if advantages.advantages.len() != group.len() {
        return Err(GrpoError::RewardCount {
            rewards: advantages.advantages.len(),
            sequences: group.len(),
        });
    }
    let use_kl = cfg.kl_coef != 0.0;

    let mut group_sum = 0.0;
    let mut group_tokens = 0usize;
    let mut kl_sum = 0.0;
    for (i, (seq, &adv)) in group.sequences.iter().zip(&advantages.advantages).enumerate() {
        let unmasked = seq.check(i)?;
        let unmasked_tokens = || {
            seq.loss_mask
                .iter()
                .enumerate()
                .filter(|(_, m)| **m)
                .map(|(t, _)| t)
        };
        let score = match cfg.ratio_mode {
            RatioMode::Token => {
                let sum: f64 = unmasked_tokens()
                    .map(|t| clipped_term((seq.logprob_new[t] - seq.logprob_old[t]).exp(), adv, eps))
                    .sum();
                match cfg.aggregation {
                    Aggregation::SequenceMean => sum / unmasked as f64,
                    Aggregation::GroupTokenMean => {
                        group_tokens += unmasked;
                        sum
                    }
                }
            }
            RatioMode::Sequence => {
                let log_ratio: f64 = unmasked_tokens()
                    .map(|t| seq.logprob_new[t] - seq.logprob_old[t])
                    .sum();
                clipped_term(log_ratio.exp(), adv, eps)
            }
        };
        group_sum += score;

        if use_kl {
            let reference = seq
                .logprob_ref
                .as_ref()
                .ok_or(GrpoError::MissingReference(i))?;
            // k3 estimator: exp(d) - d - 1 with d = ref - new
            let kl: f64 = unmasked_tokens()
                .map(|t| {
                    let d = reference[t] - seq.logprob_new[t];
                    d.exp() - d - 1.0
                })
                .sum();
            kl_sum += kl / unmasked as f64;
        }
    }

    let g = group.len() as f64;
    let surrogate = match (cfg.ratio_mode, cfg.aggregation) {
        (RatioMode::Token, Aggregation::GroupTokenMean) => group_sum / group_tokens as f64,
        _ => group_sum / g,
    };
    Ok(if use_kl {
        surrogate - cfg.kl_coef * kl_sum / g
    } else {
        surrogate
    })
}

/// Token layout of one rollout: the prompt occupies `0..prompt_len`, and
/// `turn_spans[i]` covers turn `i` of the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub prompt_len: usize,
    pub turn_spans: Vec<Range<usize>>,
}

/// Loss mask that is `false` on the prompt and on every information turn.
pub fn apply_info_mask(t: &Trajectory, layout: &TokenLayout) -> Result<Vec<bool>, GrpoError> {
    if layout.turn_spans.len() != t.turns.len() {
        return Err(GrpoError::SpanCount {
            turns: t.turns.len(),
            spans: layout.turn_spans.len(),
        });
    }
    let mut cursor = layout.prompt_len;
    for (index, span) in layout.turn_spans.iter().enumerate() {
        if span.start != cursor || span.end < span.start {
            return Err(GrpoError::SpanLayout {
                index,
                span: span.clone(),
            });
        }
        cursor = span.end;
    }
    let mut mask = vec![true; cursor];
    mask[..layout.prompt_len].fill(false);
    for (turn, span) in t.turns.iter().zip(&layout.turn_spans) {
        if turn.kind() == TurnKind::Information {
            mask[span.clone()].fill(false);
        }
    }
    Ok(mask)
}
