//! Okapi BM25 over an in-memory corpus.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Sorts by descending score, then ascending id.
pub fn sort_scored(items: &mut [Scored]) {
    items.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
}

#[derive(Clone, Debug, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut idx = Self {
            params,
            ..Self::default()
        };
        for (id, text) in docs {
            let toks = tokenize(text.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &toks {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *idx.doc_freq.entry(t.clone()).or_default() += 1;
            }
            idx.ids.push(id.into());
            idx.lengths.push(toks.len());
            idx.term_freqs.push(tf);
        }
        let total: usize = idx.lengths.iter().sum();
        idx.avg_len = if idx.ids.is_empty() {
            0.0
        } else {
            total as f64 / idx.ids.len() as f64
        };
        idx
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores of every document in insertion order. Repeated query terms
    /// count once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let avg = if self.avg_len > 0.0 { self.avg_len } else { 1.0 };
        self.term_freqs
            .iter()
            .zip(&self.lengths)
            .map(|(tf, &len)| {
                terms
                    .iter()
                    .filter_map(|t| tf.get(t).map(|&f| (t, f as f64)))
                    .map(|(t, f)| {
                        self.idf(t) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * len as f64 / avg))
                    })
                    .sum()
            })
            .collect()
    }

    /// All documents ranked; zero-score documents are kept.
    pub fn rank(&self, query: &str) -> Vec<Scored> {
        let mut out: Vec<Scored> = self
            .ids
            .iter()
            .zip(self.scores(query))
            .map(|(id, score)| Scored {
                id: id.clone(),
                score,
            })
            .collect();
        sort_scored(&mut out);
        out
    }
}

/// Builds a throwaway index over `candidates` and ranks them for `query`.
pub fn bm25_rank<S: AsRef<str>, T: AsRef<str>>(query: &str, candidates: &[(S, T)]) -> Vec<Scored> {
    Bm25Index::build(
        candidates.iter().map(|(id, text)| (id.as_ref(), text.as_ref())),
        Bm25Params::default(),
    )
    .rank(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn submit_list_prefers_d1() {
        let r = bm25_rank(
            "submit list",
            &[("d1", "select list submit"), ("d2", "sort table column")],
        );
        assert_eq!(r[0].id, "d1");
        // Two docs, term in one: idf = ln(1.5/1.5 + 1) = ln 2; tf=1, len=avg.
        let expected = 2.0 * 2f64.ln() * 2.5 / (1.0 + 1.5);
        assert!((r[0].score - expected).abs() < 1e-12);
        assert_eq!(r[1].score, 0.0);
    }

    #[test]
    fn no_overlap_orders_by_id() {
        let r = bm25_rank("zebra", &[("c", "a b"), ("a", "c d"), ("b", "e")]);
        assert_eq!(r.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(r.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn single_document() {
        let r = bm25_rank("list", &[("only", "list items")]);
        assert_eq!(r.len(), 1);
        assert!(r[0].score >= 0.0);
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let docs = [("a", "list x"), ("b", "y z")];
        assert_eq!(bm25_rank("list list", &docs), bm25_rank("list", &docs));
    }

    #[test]
    fn empty_corpus_and_empty_docs() {
        assert!(bm25_rank::<&str, &str>("q", &[]).is_empty());
        let r = bm25_rank("q", &[("a", ""), ("b", "")]);
        assert!(r.iter().all(|s| s.score == 0.0 && s.score.is_finite()));
    }
}
