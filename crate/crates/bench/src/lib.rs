//! Seeded synthetic inputs for the benchmarks.

use agentseg_core::retrieval::CorpusRecord;
use agentseg_core::trajectory::AnswerPayload;
use agentseg_core::{BinaryMask, Mode, RolloutGroup, SampleAnnotation, SearchCall, SearchTool, TextIndex, TokenSequence};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

const WORDS: [&str; 24] = [
    "band", "singer", "young", "song", "dog", "golden", "retriever", "lead", "tour", "album", "city", "river",
    "bridge", "tower", "player", "team", "league", "car", "model", "brand", "painting", "museum", "actor", "film",
];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn phrase(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Mask made of a few filled ellipses.
pub fn blob_mask(rng: &mut impl Rng, w: usize, h: usize, blobs: usize) -> BinaryMask {
    let shapes: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(2.0..(w as f64 / 4.0).max(3.0)),
                rng.random_range(2.0..(h as f64 / 4.0).max(3.0)),
            )
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        shapes.iter().any(|&(cx, cy, rx, ry)| {
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            dx * dx + dy * dy <= 1.0
        })
    })
    .unwrap()
}

pub fn mask_pairs(rng: &mut impl Rng, n: usize, w: usize, h: usize) -> Vec<(BinaryMask, BinaryMask)> {
    (0..n).map(|_| (blob_mask(rng, w, h, 3), blob_mask(rng, w, h, 3))).collect()
}

/// Video annotation whose every frame carries a single blob.
pub fn video_annotation(rng: &mut impl Rng, frames: usize, w: usize, h: usize) -> SampleAnnotation {
    let masks = (0..frames).map(|_| blob_mask(rng, w, h, 1)).collect();
    let experts = (0..3).map(|_| phrase(rng, 4)).collect();
    SampleAnnotation::from_masks("bench", phrase(rng, 8), Mode::Video, masks, experts).unwrap()
}

/// Well-formed video rollout with `searches` search/information rounds,
/// a keyframe and an answer.
pub fn rollout_text(rng: &mut impl Rng, searches: usize, frames: usize) -> String {
    let mut parts = Vec::new();
    for _ in 0..searches {
        parts.push(format!("<think>{}</think>", phrase(rng, 12)));
        let call = SearchCall::new(SearchTool::TextSearch, phrase(rng, 4));
        parts.push(format!("<search>{}</search>", call.to_payload()));
        parts.push(format!("<information>{}</information>", phrase(rng, 120)));
    }
    parts.push(format!("<keyframe>{}</keyframe>", rng.random_range(0..frames.max(1))));
    let (x, y) = (rng.random_range(0.0..400.0), rng.random_range(0.0..400.0));
    let answer = AnswerPayload {
        bbox: [x, y, x + 50.0, y + 50.0],
        point: [x + 25.0, y + 25.0],
    };
    parts.push(format!("<answer>{}</answer>", answer.to_payload()));
    parts.join("\n")
}

pub fn text_index(rng: &mut impl Rng, docs: usize) -> TextIndex {
    let records = (0..docs)
        .map(|i| {
            let len = rng.random_range(20..200);
            CorpusRecord {
                id: format!("doc-{i:06}"),
                title: phrase(rng, 3),
                body: phrase(rng, len),
            }
        })
        .collect();
    TextIndex::build(records).unwrap()
}

/// Group of `members` sequences with `tokens` tokens each, a quarter of them masked out.
pub fn rollout_group(rng: &mut impl Rng, members: usize, tokens: usize) -> RolloutGroup {
    let sequences = (0..members)
        .map(|_| {
            let old: Vec<f64> = (0..tokens).map(|_| rng.random_range(-5.0..0.0)).collect();
            let new = old.iter().map(|o| o + rng.random_range(-0.3..0.3)).collect();
            let mut mask: Vec<bool> = (0..tokens).map(|_| rng.random_bool(0.75)).collect();
            mask[0] = true;
            TokenSequence::new(new, old, mask)
        })
        .collect();
    let rewards = (0..members).map(|_| rng.random_range(0.0..5.0)).collect();
    RolloutGroup::new(sequences, rewards).unwrap()
}
