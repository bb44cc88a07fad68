//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls the code under test for
//! the quantity it checks.
#![allow(dead_code)]

use std::collections::BTreeSet;

use macas::aspect::DefinitionDictionary;
use macas::pipeline::TrainConfig;
use macas::textgraph::{Corpus, Document};
use macas::Tensor;

/// Six short documents, 47 tokens. "the" is in every document, so its idf
/// is 0 and, with one window per document, its PMI with any word is 0.
pub const TOY_DOCS: [&str; 6] = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "the cat chased the dog around the yard",
    "a bird sang in the tree",
    "the bird and the cat watched the dog",
    "the quick fox jumped over the lazy dog today",
];

pub fn toy_corpus() -> Corpus {
    corpus_of(&TOY_DOCS)
}

pub fn corpus_of(texts: &[&str]) -> Corpus {
    Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), t, "x", None))
            .collect(),
    )
    .unwrap()
}

/// Raw count times natural-log inverse document frequency.
pub fn brute_tfidf(docs: &[Vec<String>], d: usize, word: &str) -> f64 {
    let tf = docs[d].iter().filter(|t| *t == word).count() as f64;
    let df = docs.iter().filter(|doc| doc.contains(&word.to_string())).count() as f64;
    tf * (docs.len() as f64 / df).ln()
}

/// Every window of each document, enumerated explicitly as a token set.
pub fn brute_windows(docs: &[Vec<String>], window: usize) -> Vec<BTreeSet<String>> {
    let mut out = Vec::new();
    for doc in docs {
        if doc.is_empty() {
            continue;
        }
        let w = window.min(doc.len());
        let mut start = 0;
        while start + w <= doc.len() {
            out.push(doc[start..start + w].iter().cloned().collect());
            start += 1;
        }
    }
    out
}

/// Raw PMI value (possibly ≤ 0), `None` when the words never share a window.
pub fn brute_pmi(windows: &[BTreeSet<String>], a: &str, b: &str) -> Option<f64> {
    let n = windows.len() as f64;
    let ca = windows.iter().filter(|w| w.contains(a)).count() as f64;
    let cb = windows.iter().filter(|w| w.contains(b)).count() as f64;
    let cab = windows.iter().filter(|w| w.contains(a) && w.contains(b)).count() as f64;
    (cab > 0.0).then(|| ((cab / n) / ((ca / n) * (cb / n))).ln())
}

/// Dense `D^-1/2 A D^-1/2`.
pub fn brute_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] != 0.0 {
                out[i][j] = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    out
}

/// Strong and weak pairs by checking every ordered word pair of the
/// dictionary's vocabulary.
pub type PairSet = BTreeSet<(String, String)>;

pub fn brute_dict_pairs(dict: &DefinitionDictionary) -> (PairSet, PairSet) {
    let in_def = |w: &str, head: &str| dict.definition(head).is_some_and(|d| d.iter().any(|x| x == w));
    let words: Vec<String> = dict.vocabulary().into_iter().collect();
    let mut strong = BTreeSet::new();
    let mut weak = BTreeSet::new();
    for a in &words {
        for b in &words {
            if a >= b {
                continue;
            }
            match (in_def(a, b), in_def(b, a)) {
                (true, true) => {
                    strong.insert((a.clone(), b.clone()));
                }
                (true, false) | (false, true) => {
                    weak.insert((a.clone(), b.clone()));
                }
                _ => {}
            }
        }
    }
    (strong, weak)
}

/// Weighted F1 from `2TP / (2TP + FP + FN)` per class.
pub fn brute_weighted_f1(y_true: &[usize], y_pred: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        let support = y_true.iter().filter(|&&t| t == c).count() as f64;
        total += support * f1;
    }
    total / y_true.len() as f64
}

pub fn brute_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// A few-second training configuration.
pub fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("epochs", "3"),
        ("d_model", "8"),
        ("num_heads", "2"),
        ("hidden_dim", "16"),
        ("num_encoders", "1"),
        ("max_len", "8"),
        ("mlp_hidden1", "8"),
        ("mlp_hidden2", "8"),
        ("d_lbg", "8"),
        ("gcn_epochs", "20"),
        ("debias_steps", "30"),
        ("dict_steps", "30"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

pub fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
