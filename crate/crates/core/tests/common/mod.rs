#![allow(dead_code)]

use std::path::PathBuf;

use agentseg_core::trajectory::{AnswerPayload, SearchCall, SearchTool};
use agentseg_core::BinaryMask;
use proptest::prelude::*;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn search(q: &str) -> String {
    format!("<search>{}</search>", SearchCall::new(SearchTool::TextSearch, q).to_payload())
}

pub fn answer(bbox: [f64; 4], point: [f64; 2]) -> String {
    format!("<answer>{}</answer>", AnswerPayload { bbox, point }.to_payload())
}

/// Free text that survives trimming and contains no tag syntax.
pub fn word_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9][a-zA-Z0-9 .,?!'-]{0,20}[a-zA-Z0-9]"
}

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..900).prop_map(f64::from), (0.0f64..900.0)]
}

pub fn answer_payload() -> impl Strategy<Value = AnswerPayload> {
    (coord(), coord(), coord(), coord(), coord(), coord()).prop_map(|(a, b, c, d, px, py)| AnswerPayload {
        bbox: [a.min(c), b.min(d), a.max(c), b.max(d)],
        point: [px, py],
    })
}

/// A grammatical video-mode rollout: thinks and search/information pairs,
/// then optionally a keyframe and an answer.
pub fn valid_rollout() -> impl Strategy<Value = String> {
    let step = prop_oneof![
        word_text().prop_map(|t| format!("<think>{t}</think>")),
        (word_text(), word_text(), any::<bool>()).prop_map(|(q, info, image)| {
            let tool = if image { SearchTool::ImageSearch } else { SearchTool::TextSearch };
            format!(
                "<search>{}</search>\n<information>{info}</information>",
                SearchCall::new(tool, q).to_payload()
            )
        }),
        word_text().prop_map(|raw| format!("<search>{raw}</search>")),
    ];
    (
        prop::collection::vec(step, 0..8),
        prop::option::of((0usize..8, answer_payload(), any::<bool>())),
    )
        .prop_map(|(steps, tail)| {
            let mut parts = steps;
            if let Some((frame, ans, with_answer)) = tail {
                parts.push(format!("<keyframe>{frame}</keyframe>"));
                if with_answer {
                    parts.push(format!("<answer>{}</answer>", ans.to_payload()));
                }
            }
            parts.join("\n")
        })
}

/// Random masks up to 32x32 built from a few rectangles plus noise.
pub fn mask_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::new(w, h, a).unwrap(),
                    BinaryMask::new(w, h, b).unwrap(),
                )
            })
    })
}

pub fn blob_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, prop::collection::vec((0usize..32, 0usize..32, 1usize..8, 1usize..8), 0..5)).prop_map(
        |(w, h, rects)| {
            BinaryMask::from_fn(w, h, |x, y| {
                rects
                    .iter()
                    .any(|&(rx, ry, rw, rh)| x >= rx && x < rx + rw && y >= ry && y < ry + rh)
            })
            .unwrap()
        },
    )
}
