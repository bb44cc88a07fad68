use std::collections::BTreeSet;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aspect::EmbeddingTable;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamStore};
use crate::tensor::Tensor;
use crate::text::TokenSeq;
use crate::textgraph::graph::{build_graph, GraphMatrices, VocabIndex};
use crate::textgraph::weights::DEFAULT_WINDOW;
use crate::textgraph::Corpus;

pub const DEFAULT_EMBEDDING_DIM: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    /// `[feature_dim, hidden]`
    pub w1: Tensor,
    /// `[hidden, num_labels]`
    pub w2: Tensor,
}

impl GcnModel {
    pub fn init(feature_dim: usize, hidden: usize, num_labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GcnModel {
            w1: glorot_uniform(feature_dim, hidden, &mut rng),
            w2: glorot_uniform(hidden, num_labels, &mut rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_labels(&self) -> usize {
        self.w2.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeFeatures {
    /// One-hot row per node; the product with it is skipped.
    Identity,
    Dense(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnOutput {
    pub h1: Tensor,
    /// Row-wise label distributions.
    pub z: Tensor,
}

fn check_dims(g: &GraphMatrices, x: &NodeFeatures, model: &GcnModel) -> Result<()> {
    let n = g.num_nodes();
    let feature_dim = match x {
        NodeFeatures::Identity => n,
        NodeFeatures::Dense(t) => {
            if t.rows() != n {
                return Err(Error::shape("gcn_features", t.shape(), &[n, model.w1.rows()]));
            }
            t.cols()
        }
    };
    if model.w1.rows() != feature_dim {
        return Err(Error::shape("gcn_w1", model.w1.shape(), &[feature_dim, model.hidden()]));
    }
    if model.w2.rows() != model.w1.cols() {
        return Err(Error::shape("gcn_w2", model.w2.shape(), &[model.w1.cols(), model.num_labels()]));
    }
    Ok(())
}

/// Records `H1 = relu(Â X W1)` and the logits `Â H1 W2`.
fn record(g: &mut Graph, a_norm: Var, x: Option<Var>, w1: Var, w2: Var) -> Result<(Var, Var)> {
    let xw = match x {
        Some(x) => g.matmul(x, w1)?,
        None => w1,
    };
    let pre = g.matmul(a_norm, xw)?;
    let h1 = g.relu(pre)?;
    let hw = g.matmul(h1, w2)?;
    let logits = g.matmul(a_norm, hw)?;
    Ok((h1, logits))
}

pub fn gcn_forward(g: &GraphMatrices, x: &NodeFeatures, model: &GcnModel) -> Result<GcnOutput> {
    check_dims(g, x, model)?;
    let mut graph = Graph::new();
    let a = graph.constant(g.normalized.clone())?;
    let xv = match x {
        NodeFeatures::Identity => None,
        NodeFeatures::Dense(t) => Some(graph.constant(t.clone())?),
    };
    let w1 = graph.constant(model.w1.clone())?;
    let w2 = graph.constant(model.w2.clone())?;
    let (h1, logits) = record(&mut graph, a, xv, w1, w2)?;
    let z = graph.softmax_rows(logits)?;
    Ok(GcnOutput {
        h1: graph.value(h1).clone(),
        z: graph.value(z).clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub window: usize,
    pub min_count: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            window: DEFAULT_WINDOW,
            min_count: 1,
            hidden: DEFAULT_EMBEDDING_DIM,
            epochs: 200,
            lr: 0.1,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    UserId,
    ClassLabel,
}

impl std::fmt::Display for LabelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelSource::UserId => "user_id",
            LabelSource::ClassLabel => "class_label",
        })
    }
}

/// One embedding per graph node, documents first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddingTable {
    embeddings: Tensor,
    num_docs: usize,
}

impl NodeEmbeddingTable {
    pub fn new(embeddings: Tensor, num_docs: usize) -> Result<Self> {
        if num_docs > embeddings.rows() {
            return Err(Error::Input(format!(
                "{num_docs} document nodes but only {} embeddings",
                embeddings.rows()
            )));
        }
        Ok(NodeEmbeddingTable { embeddings, num_docs })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn doc_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.num_docs).map(|i| self.embeddings.row(i))
    }

    pub fn word_rows(&self) -> impl Iterator<Item = &[f64]> {
        (self.num_docs..self.num_nodes()).map(|i| self.embeddings.row(i))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.embeddings
    }

    /// Word-node embeddings keyed by word, for persistence and lookup.
    pub fn word_table(&self, vocab: &VocabIndex) -> Result<EmbeddingTable> {
        let mut t = EmbeddingTable::new(self.dim());
        for w in vocab.words() {
            let node = vocab.word_node(w).expect("vocabulary word has a node");
            t.insert(w.clone(), self.node(node).to_vec())?;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub struct GcnTrainOutcome {
    pub table: NodeEmbeddingTable,
    pub vocab: VocabIndex,
    pub model: GcnModel,
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub label_source: LabelSource,
    /// Sorted distinct labels; targets are indices into this list.
    pub labels: Vec<String>,
}

/// Builds the corpus graph and fits the GCN to map every document node to
/// its user id (or class label when any document lacks one) by full-batch
/// gradient descent. Embeddings are the first-layer activations.
pub fn train_gcn(corpus: &Corpus, config: &GcnConfig) -> Result<GcnTrainOutcome> {
    if config.hidden == 0 || config.epochs == 0 {
        return Err(Error::Config("GCN hidden size and epochs must be positive".into()));
    }
    let label_source = if corpus.has_user_ids() {
        LabelSource::UserId
    } else {
        LabelSource::ClassLabel
    };
    let doc_labels: Vec<&str> = corpus
        .documents()
        .iter()
        .map(|d| match label_source {
            LabelSource::UserId => d.user_id.as_deref().unwrap_or_default(),
            LabelSource::ClassLabel => d.label.as_str(),
        })
        .collect();
    let labels: Vec<String> = doc_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    if labels.len() < 2 {
        return Err(Error::Input(format!(
            "GCN training needs at least 2 distinct labels, found {}",
            labels.len()
        )));
    }
    let targets: Vec<usize> = doc_labels
        .iter()
        .map(|l| labels.binary_search_by(|x| x.as_str().cmp(l)).expect("label listed"))
        .collect();

    let (vocab, matrices) = build_graph(corpus, config.window, config.min_count)?;
    let n = vocab.num_nodes();
    let init = GcnModel::init(n, config.hidden, labels.len(), config.seed);
    let mut store = ParamStore::new();
    let w1 = store.add("gcn.w1", init.w1);
    let w2 = store.add("gcn.w2", init.w2);
    let doc_rows: Vec<Option<usize>> = (0..vocab.num_docs()).map(Some).collect();

    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut g = Graph::new();
        let a = g.constant(matrices.normalized.clone())?;
        let v1 = g.param(&store, w1)?;
        let v2 = g.param(&store, w2)?;
        let (_, logits) = record(&mut g, a, None, v1, v2)?;
        let docs = g.gather_rows(logits, &doc_rows)?;
        let loss = g.softmax_cross_entropy(docs, &targets)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged(format!("GCN loss is {value} at epoch {epoch}")));
        }
        losses.push(value);
        let grads = g.backward(loss)?;
        for id in [w1, w2] {
            if let Some(grad) = grads.param(id) {
                let grad = grad.clone();
                for (p, d) in store.get_mut(id).data_mut().iter_mut().zip(grad.data()) {
                    *p -= config.lr * d;
                }
            }
        }
        debug!("gcn epoch {epoch} loss {value:.6}");
    }

    let model = GcnModel {
        w1: store.get(w1).clone(),
        w2: store.get(w2).clone(),
    };
    let out = gcn_forward(&matrices, &NodeFeatures::Identity, &model)?;
    let predicted = out.z.argmax_rows();
    let correct = targets.iter().enumerate().filter(|(i, &t)| predicted[*i] == t).count();
    let train_accuracy = correct as f64 / targets.len() as f64;
    let table = NodeEmbeddingTable::new(out.h1, vocab.num_docs())?;
    Ok(GcnTrainOutcome {
        table,
        vocab,
        model,
        losses,
        train_accuracy,
        label_source,
        labels,
    })
}

/// Row `i` is the word-node embedding of token `i`; OOV and padded
/// positions are zero rows.
pub fn lookup_sequence(seq: &TokenSeq, table: &NodeEmbeddingTable, vocab: &VocabIndex) -> Tensor {
    let mut out = Tensor::zeros(seq.len().max(1), table.dim());
    for i in 0..seq.len() {
        if seq.is_pad(i) {
            continue;
        }
        if let Some(node) = vocab.word_node(&seq.tokens[i]) {
            out.row_mut(i).copy_from_slice(table.node(node));
        }
    }
    out
}
