//! Okapi BM25 over an in-memory inverted index.

use std::collections::HashMap;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25 {
    /// term -> (doc, term frequency), docs ascending
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    k1: f64,
    b: f64,
}

impl Bm25 {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        Self::with_params(docs, K1, B)
    }

    pub fn with_params<'a>(docs: impl IntoIterator<Item = &'a str>, k1: f64, b: f64) -> Self {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::new();
        for (doc, text) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc as u32, count));
            }
        }
        let total: u64 = doc_len.iter().map(|l| *l as u64).sum();
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        Bm25 {
            postings,
            doc_len,
            avgdl,
            k1,
            b,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_len.len()
    }

    /// Scores for every document that shares at least one distinct query
    /// term, in ascending document order.
    pub fn score(&self, query: &str) -> Vec<(usize, f64)> {
        let mut terms = tokenize(query);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));

        let n = self.doc_count() as f64;
        let mut scores = vec![0.0; self.doc_count()];
        let mut hit = vec![false; self.doc_count()];
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for &(doc, tf) in list {
                let tf = tf as f64;
                let dl = self.doc_len[doc as usize] as f64;
                let norm = if self.avgdl > 0.0 { dl / self.avgdl } else { 0.0 };
                scores[doc as usize] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm));
                hit[doc as usize] = true;
            }
        }
        scores
            .into_iter()
            .enumerate()
            .filter(|(i, _)| hit[*i])
            .collect()
    }
}
