//! The four abuse-aspect embeddings: directed (D), generalised (G),
//! explicit (E) and implicit (I).
//!
//! D and I come from deterministic lexicon features. G is a lookup in a
//! gender-debiased table and E a lookup in a dictionary-pair table. Any
//! other embedder can stand in through [`AspectEmbedder`].

pub mod debias;
pub mod dictionary;
pub mod features;
pub mod lexicon;
pub mod table;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::TokenSeq;

pub use debias::{train_debias, DebiasConfig, DebiasOutcome};
pub use dictionary::{extract_dict_pairs, train_dict_embeddings, DefinitionDictionary, DictTrainConfig, WordPairSet};
pub use features::{embed_directed, embed_implicit};
pub use lexicon::LexiconSet;
pub use table::EmbeddingTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aspect {
    Directed,
    Generalised,
    Explicit,
    Implicit,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Directed, Aspect::Generalised, Aspect::Explicit, Aspect::Implicit];

    pub fn letter(self) -> char {
        match self {
            Aspect::Directed => 'd',
            Aspect::Generalised => 'g',
            Aspect::Explicit => 'e',
            Aspect::Implicit => 'i',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'd' => Some(Aspect::Directed),
            'g' => Some(Aspect::Generalised),
            'e' => Some(Aspect::Explicit),
            'i' => Some(Aspect::Implicit),
            _ => None,
        }
    }

    /// D and G describe the target; E and I the content.
    pub fn is_target(self) -> bool {
        matches!(self, Aspect::Directed | Aspect::Generalised)
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter().to_ascii_uppercase())
    }
}

/// One aspect's embedding of a sequence: `[N, d]` for D, G and E, a single
/// `[1, d]` row for I.
#[derive(Clone, Debug, PartialEq)]
pub struct AspectMatrix {
    pub aspect: Aspect,
    pub matrix: Tensor,
}

impl AspectMatrix {
    pub fn new(aspect: Aspect, matrix: Tensor) -> Self {
        AspectMatrix { aspect, matrix }
    }
}

pub trait AspectEmbedder {
    fn aspect(&self) -> Aspect;
    fn dim(&self) -> usize;
    fn embed(&self, seq: &TokenSeq) -> Result<AspectMatrix>;
}

/// Row `i` is `table[tokens[i]]`; OOV and padded positions are zero rows.
pub fn embed_lookup(seq: &TokenSeq, table: &EmbeddingTable, dim: usize, aspect: Aspect) -> Result<AspectMatrix> {
    if table.dim() != dim {
        return Err(Error::Config(format!(
            "{aspect} table has dimension {}, expected {dim}",
            table.dim()
        )));
    }
    if seq.is_empty() {
        return Err(Error::Input("embedding lookup on an empty sequence".into()));
    }
    let n = seq.len();
    let mut m = Tensor::zeros(n, dim);
    for i in 0..n {
        if seq.is_pad(i) {
            continue;
        }
        if let Some(v) = table.get(&seq.tokens[i]) {
            m.row_mut(i).copy_from_slice(v);
        }
    }
    Ok(AspectMatrix::new(aspect, m))
}

pub fn embed_generalised(seq: &TokenSeq, table: &EmbeddingTable, dim: usize) -> Result<AspectMatrix> {
    embed_lookup(seq, table, dim, Aspect::Generalised)
}

pub fn embed_explicit(seq: &TokenSeq, table: &EmbeddingTable, dim: usize) -> Result<AspectMatrix> {
    embed_lookup(seq, table, dim, Aspect::Explicit)
}

pub struct DirectedEmbedder {
    pub lexicons: LexiconSet,
    pub dim: usize,
}

impl AspectEmbedder for DirectedEmbedder {
    fn aspect(&self) -> Aspect {
        Aspect::Directed
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed(&self, seq: &TokenSeq) -> Result<AspectMatrix> {
        embed_directed(seq, &self.lexicons, self.dim)
    }
}

pub struct ImplicitEmbedder {
    pub lexicons: LexiconSet,
    pub dim: usize,
}

impl AspectEmbedder for ImplicitEmbedder {
    fn aspect(&self) -> Aspect {
        Aspect::Implicit
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed(&self, seq: &TokenSeq) -> Result<AspectMatrix> {
        embed_implicit(seq, &self.lexicons, self.dim)
    }
}

pub struct LookupEmbedder {
    pub aspect: Aspect,
    pub table: EmbeddingTable,
}

impl AspectEmbedder for LookupEmbedder {
    fn aspect(&self) -> Aspect {
        self.aspect
    }
    fn dim(&self) -> usize {
        self.table.dim()
    }
    fn embed(&self, seq: &TokenSeq) -> Result<AspectMatrix> {
        embed_lookup(seq, &self.table, self.table.dim(), self.aspect)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize, tokenize_fixed};

    #[test]
    fn lookup_hits_misses_and_padding() {
        let mut table = EmbeddingTable::new(2);
        table.insert("cat", vec![0.5, -1.0]).unwrap();
        let m = embed_generalised(&tokenize_fixed("cat zebra", 3), &table, 2).unwrap();
        assert_eq!(m.matrix.row(0), &[0.5, -1.0]);
        assert_eq!(m.matrix.row(1), &[0.0, 0.0]);
        assert_eq!(m.matrix.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn lookup_dimension_mismatch() {
        let table = EmbeddingTable::random(["a"], 3, 0);
        assert!(matches!(
            embed_generalised(&tokenize("a"), &table, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn explicit_profanity_row_is_nonzero() {
        let lex = LexiconSet::builtin();
        let dict = DefinitionDictionary::builtin();
        let mut vocab = dict.vocabulary();
        vocab.extend(lex.profanity.iter().cloned());
        let cfg = DictTrainConfig {
            steps: 10,
            ..Default::default()
        };
        let table = train_dict_embeddings(&extract_dict_pairs(&dict), &vocab, &cfg).unwrap();
        let m = embed_explicit(&tokenize("you idiot qwertyuiop"), &table, 16).unwrap();
        assert_eq!(m.matrix.shape(), &[3, 16]);
        assert!(m.matrix.row(1).iter().any(|&v| v != 0.0));
        assert!(m.matrix.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aspect_letters() {
        for a in Aspect::ALL {
            assert_eq!(Aspect::from_letter(a.letter()), Some(a));
        }
        assert!(Aspect::Generalised.is_target());
        assert!(!Aspect::Implicit.is_target());
    }
}
