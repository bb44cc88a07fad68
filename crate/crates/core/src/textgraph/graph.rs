use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::textgraph::weights::WindowStats;
use crate::textgraph::Corpus;

/// Dense node numbering: documents `0..num_docs`, then words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct VocabIndex {
    docs: Vec<String>,
    words: Vec<String>,
    word_nodes: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    docs: Vec<String>,
    words: Vec<String>,
}

impl From<VocabRepr> for VocabIndex {
    fn from(r: VocabRepr) -> Self {
        VocabIndex::new(r.docs, r.words)
    }
}

impl From<VocabIndex> for VocabRepr {
    fn from(v: VocabIndex) -> Self {
        VocabRepr { docs: v.docs, words: v.words }
    }
}

impl VocabIndex {
    pub fn new(docs: Vec<String>, words: Vec<String>) -> Self {
        let mut v = VocabIndex {
            docs,
            words,
            word_nodes: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        let offset = self.docs.len();
        self.word_nodes = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), offset + i))
            .collect();
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.docs.len() + self.words.len()
    }

    pub fn word_node(&self, word: &str) -> Option<usize> {
        self.word_nodes.get(word).copied()
    }

    pub fn doc_node(&self, id: &str) -> Option<usize> {
        self.docs.iter().position(|d| d == id)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn docs(&self) -> &[String] {
        &self.docs
    }

    pub fn node_name(&self, node: usize) -> &str {
        if node < self.docs.len() {
            &self.docs[node]
        } else {
            &self.words[node - self.docs.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphMatrices {
    /// Symmetric weighted adjacency with unit diagonal.
    pub adjacency: Tensor,
    /// `D^{-1/2} A D^{-1/2}` with `D` the row sums of `adjacency`.
    pub normalized: Tensor,
}

impl GraphMatrices {
    pub fn from_adjacency(adjacency: Tensor) -> Result<Self> {
        let (n, m) = adjacency.dims2();
        if n != m {
            return Err(Error::shape("normalize_adjacency", adjacency.shape(), &[n, n]));
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / adjacency.row(i).iter().sum::<f64>().sqrt())
            .collect();
        let mut normalized = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let a = adjacency.get(i, j);
                if a != 0.0 {
                    normalized.set(i, j, inv_sqrt[i] * a * inv_sqrt[j]);
                }
            }
        }
        if !normalized.is_finite() {
            return Err(Error::NonFinite { op: "normalize_adjacency" });
        }
        Ok(GraphMatrices { adjacency, normalized })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Non-zero `(src, dst, weight)` entries with `src <= dst`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                let w = self.adjacency.get(i, j);
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// `src<TAB>dst<TAB>weight` lines.
    pub fn edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j, w) in self.edges() {
            let _ = writeln!(s, "{i}\t{j}\t{w}");
        }
        s
    }
}

/// Assembles the word-document graph. Words occurring fewer than
/// `min_count` times in the corpus are left out.
pub fn build_graph(corpus: &Corpus, window: usize, min_count: usize) -> Result<(VocabIndex, GraphMatrices)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus.documents() {
        let mut seen = std::collections::HashSet::new();
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
            if seen.insert(t.as_str()) {
                *df.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    let words: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(w, _)| w.to_string())
        .collect();
    if words.is_empty() {
        return Err(Error::Input(format!("no word occurs at least {min_count} times")));
    }
    let docs: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    let vocab = VocabIndex::new(docs, words);
    let n = vocab.num_nodes();
    let mut a = Tensor::identity(n);

    let num_docs = corpus.len() as f64;
    for (di, doc) in corpus.documents().iter().enumerate() {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &doc.tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        for (w, count) in tf {
            let Some(wi) = vocab.word_node(w) else { continue };
            let weight = count as f64 * (num_docs / df[w] as f64).ln();
            if weight > 0.0 {
                a.set(di, wi, weight);
                a.set(wi, di, weight);
            }
        }
    }

    let stats = WindowStats::compute(corpus, window)?;
    for (wa, wb, value) in stats.positive_pairs() {
        if let (Some(i), Some(j)) = (vocab.word_node(wa), vocab.word_node(wb)) {
            a.set(i, j, value);
            a.set(j, i, value);
        }
    }

    let g = GraphMatrices::from_adjacency(a)?;
    Ok((vocab, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgraph::Document;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::new(format!("d{i}"), t, "x", None))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_diagonal_and_symmetry() {
        let c = corpus(&["a b c a", "b d", "e f e", "c a"]);
        let (v, g) = build_graph(&c, 20, 1).unwrap();
        let n = v.num_nodes();
        assert_eq!(n, 4 + 6);
        for i in 0..n {
            assert_eq!(g.adjacency.get(i, i), 1.0);
            for j in 0..n {
                assert_eq!(g.adjacency.get(i, j), g.adjacency.get(j, i));
                assert!((g.normalized.get(i, j) - g.normalized.get(j, i)).abs() < 1e-12);
                assert!(g.adjacency.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn isolated_node_normalises_to_one() {
        // "z" sits in every document, so it gets no TF-IDF edge, and as the
        // only word of its second window it shares no PMI window
        let c = corpus(&["z", "z"]);
        let (v, g) = build_graph(&c, 20, 1).unwrap();
        let z = v.word_node("z").unwrap();
        assert_eq!(g.normalized.get(z, z), 1.0);
        assert_eq!(g.edges().len(), v.num_nodes());
    }

    #[test]
    fn min_count_filters_and_empty_vocab_errors() {
        let c = corpus(&["a a b", "a c"]);
        let (v, _) = build_graph(&c, 20, 2).unwrap();
        assert_eq!(v.words(), ["a"]);
        assert!(build_graph(&c, 20, 10).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let c = corpus(&["the cat sat", "the dog ran far", "a cat ran"]);
        let (_, g1) = build_graph(&c, 2, 1).unwrap();
        let (_, g2) = build_graph(&c, 2, 1).unwrap();
        assert_eq!(g1.adjacency.data(), g2.adjacency.data());
        assert_eq!(g1.edge_list(), g2.edge_list());
    }
}
