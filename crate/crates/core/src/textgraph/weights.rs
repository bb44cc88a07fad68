//! Document-word TF-IDF and word-word PMI edge weights.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::textgraph::Corpus;

pub const DEFAULT_WINDOW: usize = 20;

/// Number of documents containing `word`.
pub fn document_frequency(corpus: &Corpus, word: &str) -> usize {
    corpus
        .documents()
        .iter()
        .filter(|d| d.tokens.iter().any(|t| t == word))
        .count()
}

/// `tf · ln(|docs| / df)` with `tf` the raw count of `word` in the document.
pub fn tfidf(corpus: &Corpus, doc_id: &str, word: &str) -> Result<f64> {
    let doc = corpus
        .document(doc_id)
        .ok_or_else(|| Error::Input(format!("unknown document {doc_id:?}")))?;
    let df = document_frequency(corpus, word);
    if df == 0 {
        return Err(Error::Input(format!("word {word:?} does not occur in the corpus")));
    }
    let tf = doc.tokens.iter().filter(|t| *t == word).count();
    Ok(tf as f64 * (corpus.len() as f64 / df as f64).ln())
}

/// Sliding-window occurrence counts. Every document contributes each
/// contiguous span of `min(window, len)` tokens, stride 1; windows never
/// cross documents.
#[derive(Clone, Debug)]
pub struct WindowStats {
    pub window: usize,
    pub total_windows: u64,
    words: HashMap<String, usize>,
    single: Vec<u64>,
    pair: HashMap<(usize, usize), u64>,
}

impl WindowStats {
    pub fn compute(corpus: &Corpus, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("PMI window must be at least 1".into()));
        }
        let mut stats = WindowStats {
            window,
            total_windows: 0,
            words: HashMap::new(),
            single: Vec::new(),
            pair: HashMap::new(),
        };
        for doc in corpus.documents() {
            let ids: Vec<usize> = doc.tokens.iter().map(|t| stats.intern(t)).collect();
            if ids.is_empty() {
                continue;
            }
            let span = window.min(ids.len());
            let mut distinct = Vec::with_capacity(span);
            for start in 0..=ids.len() - span {
                distinct.clear();
                distinct.extend_from_slice(&ids[start..start + span]);
                distinct.sort_unstable();
                distinct.dedup();
                stats.total_windows += 1;
                for (k, &a) in distinct.iter().enumerate() {
                    stats.single[a] += 1;
                    for &b in &distinct[k + 1..] {
                        *stats.pair.entry((a, b)).or_insert(0) += 1;
                    }
                }
            }
        }
        Ok(stats)
    }

    fn intern(&mut self, word: &str) -> usize {
        if let Some(&i) = self.words.get(word) {
            return i;
        }
        let i = self.single.len();
        self.words.insert(word.to_string(), i);
        self.single.push(0);
        i
    }

    pub fn windows_containing(&self, word: &str) -> u64 {
        self.words.get(word).map_or(0, |&i| self.single[i])
    }

    pub fn windows_containing_both(&self, a: &str, b: &str) -> u64 {
        match (self.words.get(a), self.words.get(b)) {
            (Some(&i), Some(&j)) if i != j => *self.pair.get(&(i.min(j), i.max(j))).unwrap_or(&0),
            _ => 0,
        }
    }

    /// `ln(p(a,b) / (p(a) p(b)))` when strictly positive; `None` otherwise
    /// and for `a == b`.
    pub fn pmi(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return None;
        }
        let joint = self.windows_containing_both(a, b);
        if joint == 0 {
            return None;
        }
        let total = self.total_windows as f64;
        let pa = self.windows_containing(a) as f64 / total;
        let pb = self.windows_containing(b) as f64 / total;
        let value = ((joint as f64 / total) / (pa * pb)).ln();
        (value > 0.0).then_some(value)
    }

    /// Every word pair with strictly positive PMI, `(a, b, pmi)` with `a < b`.
    pub fn positive_pairs(&self) -> Vec<(&str, &str, f64)> {
        let mut names = vec![""; self.single.len()];
        for (w, &i) in &self.words {
            names[i] = w.as_str();
        }
        let mut out: Vec<(&str, &str, f64)> = self
            .pair
            .keys()
            .filter_map(|&(i, j)| {
                let (a, b) = if names[i] < names[j] { (names[i], names[j]) } else { (names[j], names[i]) };
                self.pmi(a, b).map(|v| (a, b, v))
            })
            .collect();
        out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        out
    }
}

pub fn pmi(corpus: &Corpus, a: &str, b: &str, window: usize) -> Result<Option<f64>> {
    Ok(WindowStats::compute(corpus, window)?.pmi(a, b))
}
