//! Word-document graph of a training corpus and the GCN that turns it into
//! user-linguistic-behaviour word embeddings.
//!
//! Nodes are all documents followed by all vocabulary words. Edges are
//! weight-1 self-loops, document-word TF-IDF and word-word positive PMI.

pub mod gcn;
pub mod graph;
pub mod weights;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize_words;

pub use gcn::{gcn_forward, lookup_sequence, train_gcn, GcnConfig, GcnModel, GcnOutput, GcnTrainOutcome, LabelSource, NodeEmbeddingTable, NodeFeatures};
pub use graph::{build_graph, GraphMatrices, VocabIndex};
pub use weights::{pmi, tfidf, WindowStats, DEFAULT_WINDOW};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: String,
    pub user_id: Option<String>,
}

impl Document {
    /// Tokenises `text` with the pipeline tokenizer.
    pub fn new(id: impl Into<String>, text: &str, label: impl Into<String>, user_id: Option<String>) -> Self {
        Document {
            id: id.into(),
            tokens: tokenize_words(text),
            label: label.into(),
            user_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        if documents.len() < 2 {
            return Err(Error::Input(format!(
                "a corpus needs at least 2 documents, got {}",
                documents.len()
            )));
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Input(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// True when every document carries a user id.
    pub fn has_user_ids(&self) -> bool {
        self.documents.iter().all(|d| d.user_id.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_invariants() {
        assert!(Corpus::new(vec![Document::new("a", "x", "l", None)]).is_err());
        assert!(Corpus::new(vec![
            Document::new("a", "x", "l", None),
            Document::new("a", "y", "l", None)
        ])
        .is_err());
        let c = Corpus::new(vec![
            Document::new("a", "x", "l", Some("u1".into())),
            Document::new("b", "y", "l", None),
        ])
        .unwrap();
        assert!(!c.has_user_ids());
    }
}
