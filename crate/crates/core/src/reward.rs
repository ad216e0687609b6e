//! Hierarchical rollout reward: `alpha * (igr + tpr) + (r_iou + r_l1 + r_point + r_frame)`.
//!
//! * `igr` rewards a first search query that matches an expert query.
//! * `tpr` is a tapering bonus over the number of well-formed actions,
//!   `1 - (1 - p)^min(k, M)`.
//! * The outcome terms score the final positional prompt against the
//!   ground-truth box and point of the selected keyframe, and how prominent
//!   the target is in that keyframe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::SampleAnnotation;
use crate::similarity::SimilarityProvider;
use crate::trajectory::{count_valid_actions, Mode, Terminal, Trajectory, TurnKind};

/// How the box L1 distance aggregates over the four coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for L1Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(L1Mode::Mean),
            "sum" => Ok(L1Mode::Sum),
            other => Err(format!("unknown l1 mode `{other}` (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    /// Base reward of the tapering process reward.
    pub p: f64,
    /// Action count at which the tapering reward saturates.
    pub max_turns: u32,
    pub sim_threshold: f64,
    pub iou_threshold: f64,
    pub l1_threshold_px: f64,
    pub l1_mode: L1Mode,
    pub point_dist_threshold_px: f64,
    /// Edge length of the square keyframe the policy answers on. Ground-truth
    /// boxes are rescaled from mask pixels to this space; `None` scores in
    /// mask pixels directly.
    pub keyframe_edge: Option<u32>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.5,
            p: 0.7,
            max_turns: 10,
            sim_threshold: 0.5,
            iou_threshold: 0.5,
            l1_threshold_px: 10.0,
            l1_mode: L1Mode::Mean,
            point_dist_threshold_px: 100.0,
            keyframe_edge: Some(864),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardConfigError {
    #[error("p must lie in [0, 1], got {0}")]
    BaseReward(f64),
    #[error("max_turns must be at least 1")]
    TurnCap,
    #[error("alpha must be non-negative, got {0}")]
    Alpha(f64),
    #[error("threshold `{0}` must be positive, got {1}")]
    Threshold(&'static str, f64),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(RewardConfigError::BaseReward(self.p));
        }
        if self.max_turns < 1 {
            return Err(RewardConfigError::TurnCap);
        }
        if !(self.alpha >= 0.0) {
            return Err(RewardConfigError::Alpha(self.alpha));
        }
        for (name, v) in [
            ("sim_threshold", self.sim_threshold),
            ("iou_threshold", self.iou_threshold),
            ("l1_threshold_px", self.l1_threshold_px),
            ("point_dist_threshold_px", self.point_dist_threshold_px),
        ] {
            if !(v > 0.0) {
                return Err(RewardConfigError::Threshold(name, v));
            }
        }
        if self.keyframe_edge == Some(0) {
            return Err(RewardConfigError::Threshold("keyframe_edge", 0.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeReward {
    pub r_iou: f64,
    pub r_l1: f64,
    pub r_point: f64,
    pub r_frame: f64,
}

impl OutcomeReward {
    pub fn sum(&self) -> f64 {
        self.r_iou + self.r_l1 + self.r_point + self.r_frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub igr: f64,
    pub tpr: f64,
    pub r_iou: f64,
    pub r_l1: f64,
    pub r_point: f64,
    pub r_frame: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const COLUMNS: [&'static str; 7] = ["igr", "tpr", "r_iou", "r_l1", "r_point", "r_frame", "total"];

    pub fn compose(alpha: f64, igr: f64, tpr: f64, outcome: OutcomeReward) -> Self {
        let mut b = RewardBreakdown {
            igr,
            tpr,
            r_iou: outcome.r_iou,
            r_l1: outcome.r_l1,
            r_point: outcome.r_point,
            r_frame: outcome.r_frame,
            total: 0.0,
        };
        b.total = b.recompose(alpha);
        b
    }

    /// Total recomputed from the sub-terms.
    pub fn recompose(&self, alpha: f64) -> f64 {
        alpha * (self.igr + self.tpr) + (self.r_iou + self.r_l1 + self.r_point + self.r_frame)
    }

    pub fn values(&self) -> [f64; 7] {
        [self.igr, self.tpr, self.r_iou, self.r_l1, self.r_point, self.r_frame, self.total]
    }
}

/// Initial guidance reward.
///
/// With an empty expert query set the reward goes to restraint: 1 iff the
/// rollout answered without issuing any search.
pub fn reward_igr(
    t: &Trajectory,
    ann: &SampleAnnotation,
    sim: &dyn SimilarityProvider,
    cfg: &RewardConfig,
) -> f64 {
    if ann.expert_queries.is_empty() {
        let searched = t.turns.iter().any(|turn| turn.kind() == TurnKind::Search);
        return indicator(t.terminal == Terminal::Answered && !searched);
    }
    let Some(Some(first)) = t.first_search() else {
        return 0.0;
    };
    let best = ann
        .expert_queries
        .iter()
        .map(|s| sim.similarity(&first.query, s))
        .fold(f64::NEG_INFINITY, f64::max);
    indicator(best > cfg.sim_threshold)
}

/// Tapering process reward `1 - (1 - p)^min(k, M)`.
pub fn reward_tpr(k: usize, cfg: &RewardConfig) -> f64 {
    let exponent = k.min(cfg.max_turns as usize) as i32;
    1.0 - (1.0 - cfg.p).powi(exponent)
}

/// Continuous IoU of two `[x1, y1, x2, y2]` boxes. Two identical degenerate
/// boxes have IoU 1.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return indicator(a == b);
    }
    inter / union
}

pub fn box_l1(a: &[f64; 4], b: &[f64; 4], mode: L1Mode) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    match mode {
        L1Mode::Mean => sum / 4.0,
        L1Mode::Sum => sum,
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Outcome terms. Rollouts that did not answer score all zeros.
pub fn reward_outcome(t: &Trajectory, ann: &SampleAnnotation, cfg: &RewardConfig) -> OutcomeReward {
    if t.terminal != Terminal::Answered {
        return OutcomeReward::default();
    }
    let Some(answer) = t.answer() else {
        return OutcomeReward::default();
    };
    let frame = match t.mode {
        Mode::Image => 0,
        Mode::Video => match t.keyframe() {
            Some(j) => j,
            None => return OutcomeReward::default(),
        },
    };
    if frame >= ann.frame_count() {
        return OutcomeReward::default();
    }

    let r_frame = match t.mode {
        Mode::Image => 1.0,
        Mode::Video => {
            let areas = ann.component_areas();
            let max = areas.iter().copied().max().unwrap_or(0);
            if max == 0 {
                0.0
            } else {
                areas[frame] as f64 / max as f64
            }
        }
    };

    let Some(gt) = ann.gt_prompt(frame) else {
        return OutcomeReward {
            r_frame,
            ..Default::default()
        };
    };
    let gt = match cfg.keyframe_edge {
        Some(edge) => {
            let (w, h) = ann.mask_dims();
            gt.scaled(edge as f64 / w as f64, edge as f64 / h as f64)
        }
        None => gt,
    };

    let bbox = &answer.bbox;
    let [px, py] = answer.point;
    let inside = px >= bbox[0] && px <= bbox[2] && py >= bbox[1] && py <= bbox[3];
    let dist = ((px - gt.point[0]).powi(2) + (py - gt.point[1]).powi(2)).sqrt();
    OutcomeReward {
        r_iou: indicator(box_iou(bbox, &gt.bbox) > cfg.iou_threshold),
        r_l1: indicator(box_l1(bbox, &gt.bbox, cfg.l1_mode) < cfg.l1_threshold_px),
        r_point: indicator(inside && dist < cfg.point_dist_threshold_px),
        r_frame,
    }
}

pub fn reward_total(
    t: &Trajectory,
    ann: &SampleAnnotation,
    sim: &dyn SimilarityProvider,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let igr = reward_igr(t, ann, sim, cfg);
    let k = count_valid_actions(t, Some(ann.frame_count()));
    let tpr = reward_tpr(k, cfg);
    let outcome = reward_outcome(t, ann, cfg);
    RewardBreakdown::compose(cfg.alpha, igr, tpr, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use crate::similarity::LexicalCosine;
    use crate::trajectory::parse_trajectory;

    fn rect(w: usize, h: usize, x1: usize, y1: usize, x2: usize, y2: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x1 && x <= x2 && y >= y1 && y <= y2).unwrap()
    }

    fn pixel_cfg() -> RewardConfig {
        RewardConfig {
            keyframe_edge: None,
            ..Default::default()
        }
    }

    fn answer(kf: usize, bbox: [f64; 4], point: [f64; 2]) -> String {
        format!(
            "<keyframe>{kf}</keyframe><answer>{{\"bbox_2d\": [{}, {}, {}, {}], \"point_2d\": [{}, {}]}}</answer>",
            bbox[0], bbox[1], bbox[2], bbox[3], point[0], point[1]
        )
    }

    #[test]
    fn tpr_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(reward_tpr(0, &cfg), 0.0);
        assert_eq!(reward_tpr(1, &cfg), 0.7);
        assert!((reward_tpr(3, &cfg) - 0.973).abs() < 1e-12);
        assert_eq!(reward_tpr(12, &cfg), reward_tpr(10, &cfg));
    }

    #[test]
    fn igr_examples() {
        let cfg = RewardConfig::default();
        let mask = rect(8, 8, 1, 1, 4, 4);
        let ann = SampleAnnotation::from_masks(
            "a",
            "q",
            Mode::Video,
            vec![mask.clone()],
            vec!["2025 Oscar Best Actress".into()],
        )
        .unwrap();
        let search = |q: &str| {
            parse_trajectory(
                &format!("<search>{{\"name\": \"text_search\", \"query\": \"{q}\"}}</search><information>x</information>"),
                Mode::Video,
            )
        };
        assert_eq!(reward_igr(&search("2025 Oscar Best Actress"), &ann, &LexicalCosine, &cfg), 1.0);
        assert_eq!(reward_igr(&search("tallest mountain"), &ann, &LexicalCosine, &cfg), 0.0);
        let direct = parse_trajectory(&answer(0, [1.0, 1.0, 4.0, 4.0], [2.0, 2.0]), Mode::Video);
        assert_eq!(reward_igr(&direct, &ann, &LexicalCosine, &cfg), 0.0);

        let no_search = SampleAnnotation::from_masks("b", "q", Mode::Video, vec![mask], vec![]).unwrap();
        assert_eq!(reward_igr(&direct, &no_search, &LexicalCosine, &cfg), 1.0);
        assert_eq!(reward_igr(&search("anything"), &no_search, &LexicalCosine, &cfg), 0.0);
        let empty = parse_trajectory("", Mode::Video);
        assert_eq!(reward_igr(&empty, &no_search, &LexicalCosine, &cfg), 0.0);
    }

    #[test]
    fn igr_threshold_is_strict() {
        let ann = SampleAnnotation::from_masks(
            "a",
            "q",
            Mode::Video,
            vec![rect(4, 4, 0, 0, 1, 1)],
            vec!["x".into()],
        )
        .unwrap();
        let t = parse_trajectory(
            "<search>{\"name\": \"text_search\", \"query\": \"y\"}</search><information>i</information>",
            Mode::Video,
        );
        let half = |_: &str, _: &str| 0.5;
        let above = |_: &str, _: &str| 0.5000001;
        let cfg = RewardConfig::default();
        assert_eq!(reward_igr(&t, &ann, &half, &cfg), 0.0);
        assert_eq!(reward_igr(&t, &ann, &above, &cfg), 1.0);
    }

    #[test]
    fn box_iou_example() {
        let iou = box_iou(&[0.0, 0.0, 10.0, 10.0], &[5.0, 5.0, 15.0, 15.0]);
        assert!((iou - 25.0 / 175.0).abs() < 1e-15);
        assert_eq!(box_iou(&[3.0, 4.0, 3.0, 4.0], &[3.0, 4.0, 3.0, 4.0]), 1.0);
        assert_eq!(box_iou(&[3.0, 4.0, 3.0, 4.0], &[3.0, 5.0, 3.0, 5.0]), 0.0);
    }

    #[test]
    fn identity_answer_scores_all_binary_terms() {
        let mask = rect(32, 32, 4, 6, 20, 14);
        let gt = crate::metrics::derive_gt_prompt(&mask).unwrap();
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, vec![mask], vec![]).unwrap();
        let t = parse_trajectory(&answer(0, gt.bbox, gt.point), Mode::Video);
        let o = reward_outcome(&t, &ann, &pixel_cfg());
        assert_eq!((o.r_iou, o.r_l1, o.r_point, o.r_frame), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn point_outside_box_scores_zero_point() {
        let mask = rect(16, 16, 0, 0, 5, 5);
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, vec![mask.clone(), mask], vec![]).unwrap();
        let t = parse_trajectory(
            "<keyframe>1</keyframe><answer>{\"bbox_2d\":[0,0,5,5],\"point_2d\":[9,9]}</answer>",
            Mode::Video,
        );
        let o = reward_outcome(&t, &ann, &pixel_cfg());
        assert_eq!(o.r_point, 0.0);
        assert_eq!(o.r_iou, 1.0);
    }

    #[test]
    fn keyframe_rescaling() {
        // 100x100 mask scored on an 864 keyframe: box scales by 8.64.
        let mask = rect(100, 100, 10, 10, 50, 50);
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, vec![mask], vec![]).unwrap();
        let cfg = RewardConfig::default();
        let scaled = parse_trajectory(&answer(0, [86.4, 86.4, 432.0, 432.0], [259.2, 259.2]), Mode::Video);
        let o = reward_outcome(&scaled, &ann, &cfg);
        assert_eq!((o.r_iou, o.r_l1, o.r_point), (1.0, 1.0, 1.0));
        let unscaled = parse_trajectory(&answer(0, [10.0, 10.0, 50.0, 50.0], [30.0, 30.0]), Mode::Video);
        let o = reward_outcome(&unscaled, &ann, &cfg);
        assert_eq!((o.r_iou, o.r_l1), (0.0, 0.0));
    }

    #[test]
    fn frame_reward_ratios() {
        // largest-component areas 100, 200, 50
        let masks = vec![rect(40, 40, 0, 0, 9, 9), rect(40, 40, 0, 0, 19, 9), rect(40, 40, 0, 0, 4, 9)];
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, masks, vec![]).unwrap();
        assert_eq!(ann.component_areas(), vec![100, 200, 50]);
        for (j, expected) in [(1, 1.0), (0, 0.5), (2, 0.25)] {
            let t = parse_trajectory(&answer(j, [0.0, 0.0, 5.0, 5.0], [1.0, 1.0]), Mode::Video);
            assert_eq!(reward_outcome(&t, &ann, &pixel_cfg()).r_frame, expected);
        }
        let out_of_range = parse_trajectory(&answer(3, [0.0, 0.0, 5.0, 5.0], [1.0, 1.0]), Mode::Video);
        assert_eq!(reward_outcome(&out_of_range, &ann, &pixel_cfg()), OutcomeReward::default());
    }

    #[test]
    fn degenerate_masks_give_zero_frame_reward() {
        let masks = vec![BinaryMask::empty(8, 8).unwrap(); 2];
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Video, masks, vec![]).unwrap();
        let t = parse_trajectory(&answer(0, [0.0, 0.0, 5.0, 5.0], [1.0, 1.0]), Mode::Video);
        assert_eq!(reward_outcome(&t, &ann, &pixel_cfg()), OutcomeReward::default());
    }

    #[test]
    fn image_mode_frame_reward_is_one() {
        let ann = SampleAnnotation::from_masks("a", "q", Mode::Image, vec![rect(16, 16, 2, 2, 6, 6)], vec![]).unwrap();
        let t = parse_trajectory(
            "<answer>{\"bbox_2d\":[2,2,6,6],\"point_2d\":[4,4]}</answer>",
            Mode::Image,
        );
        let o = reward_outcome(&t, &ann, &pixel_cfg());
        assert_eq!(o, OutcomeReward { r_iou: 1.0, r_l1: 1.0, r_point: 1.0, r_frame: 1.0 });
    }

    #[test]
    fn perfect_and_empty_totals() {
        let mask = rect(32, 32, 4, 4, 12, 12);
        let gt = crate::metrics::derive_gt_prompt(&mask).unwrap();
        let ann = SampleAnnotation::from_masks(
            "a",
            "q",
            Mode::Video,
            vec![mask],
            vec!["capital of France".into()],
        )
        .unwrap();
        let text = format!(
            "<search>{{\"name\": \"text_search\", \"query\": \"capital of France\"}}</search><information>Paris</information>\
             <search>{{\"name\": \"image_search\", \"query\": \"Eiffel tower\"}}</search><information>img</information>{}",
            answer(0, gt.bbox, gt.point)
        );
        let t = parse_trajectory(&text, Mode::Video);
        let b = reward_total(&t, &ann, &LexicalCosine, &pixel_cfg());
        assert_eq!(b.igr, 1.0);
        assert!((b.tpr - 0.973).abs() < 1e-12);
        assert!((b.total - 4.9865).abs() < 1e-12);
        assert_eq!(b.total, b.recompose(0.5));

        let empty = parse_trajectory("", Mode::Video);
        assert_eq!(reward_total(&empty, &ann, &LexicalCosine, &pixel_cfg()).total, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig { p: 1.5, ..Default::default() };
        assert_eq!(bad.validate(), Err(RewardConfigError::BaseReward(1.5)));
        let bad = RewardConfig { max_turns: 0, ..Default::default() };
        assert_eq!(bad.validate(), Err(RewardConfigError::TurnCap));
        let bad = RewardConfig { iou_threshold: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(RewardConfigError::Threshold("iou_threshold", _))));
    }
}
