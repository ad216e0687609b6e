//! Text similarity used by the initial-guidance reward.

use std::collections::BTreeMap;

/// Maps two strings to a similarity in `[-1, 1]`. Implementations must be
/// callable from several threads at once.
pub trait SimilarityProvider: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

impl<F> SimilarityProvider for F
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn similarity(&self, a: &str, b: &str) -> f64 {
        self(a, b)
    }
}

/// Cosine similarity of L2-normalised term-frequency vectors over lowercase
/// word unigrams and bigrams.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalCosine;

fn features(text: &str) -> BTreeMap<String, f64> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut tf = BTreeMap::new();
    for w in &words {
        *tf.entry(w.clone()).or_insert(0.0) += 1.0;
    }
    for pair in words.windows(2) {
        *tf.entry(format!("{} {}", pair[0], pair[1])).or_insert(0.0) += 1.0;
    }
    tf
}

impl SimilarityProvider for LexicalCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let fa = features(a);
        let fb = features(b);
        let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        let (na, nb) = (norm(&fa), norm(&fb));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = fa
            .iter()
            .filter_map(|(k, x)| fb.get(k).map(|y| x * y))
            .sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}
