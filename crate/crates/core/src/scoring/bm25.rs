//! Okapi BM25 lexical baseline.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: u64,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, u64>,
}

impl CorpusStats {
    pub fn from_documents<I, D>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: AsRef<[String]>,
    {
        let mut stats = CorpusStats::default();
        let mut total_len = 0u64;
        for doc in docs {
            let terms = doc.as_ref();
            stats.n_docs += 1;
            total_len += terms.len() as u64;
            let unique: HashSet<&String> = terms.iter().collect();
            for t in unique {
                *stats.doc_freq.entry(t.clone()).or_default() += 1;
            }
        }
        if stats.n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        stats.avg_len = total_len as f64 / stats.n_docs as f64;
        Ok(stats)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let total = self.n_docs as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }
}

/// Sum over query terms of `idf · tf·(k1+1) / (tf + k1·(1 − b + b·len/avg_len))`.
pub fn bm25_score<S: AsRef<str>>(query_terms: &[S], doc_terms: &[S], stats: &CorpusStats, params: Bm25Params) -> Result<f64> {
    if stats.n_docs == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut tf: HashMap<&str, f64> = HashMap::new();
    for t in doc_terms {
        *tf.entry(t.as_ref()).or_default() += 1.0;
    }
    let len_ratio = if stats.avg_len > 0.0 {
        doc_terms.len() as f64 / stats.avg_len
    } else {
        1.0
    };
    let norm = params.k1 * (1.0 - params.b + params.b * len_ratio);
    Ok(query_terms
        .iter()
        .filter_map(|t| tf.get(t.as_ref()).map(|&f| (t, f)))
        .map(|(t, f)| stats.idf(t.as_ref()) * f * (params.k1 + 1.0) / (f + norm))
        .sum())
}
