//! Turns raw text into the per-aspect matrices the model consumes.

use std::collections::BTreeSet;

use log::info;
use serde::{Deserialize, Serialize};

use crate::aspect::{
    embed_directed, embed_explicit, embed_generalised, embed_implicit, embed_lookup, extract_dict_pairs,
    train_debias, train_dict_embeddings, Aspect, DefinitionDictionary, EmbeddingTable, LexiconSet,
};
use crate::error::Result;
use crate::model::{AspectDims, AspectMask, Sample};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::dataset::Dataset;
use crate::text::{tokenize_fixed, tokenize_words};
use crate::textgraph::{train_gcn, LabelSource};

/// Everything needed to featurise unseen text, fitted on a training set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Featurizer {
    pub lexicons: LexiconSet,
    pub aspects: AspectMask,
    pub dims: AspectDims,
    pub max_len: usize,
    pub generalised: Option<EmbeddingTable>,
    pub explicit: Option<EmbeddingTable>,
    pub behaviour: Option<EmbeddingTable>,
}

/// What fitting learned, for logging.
#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub gcn_label_source: Option<LabelSource>,
    pub gcn_train_accuracy: Option<f64>,
    pub gcn_labels: usize,
    pub graph_words: usize,
}

impl Featurizer {
    /// Trains the tables the enabled aspects need: the debiased table for
    /// G, the dictionary-pair table for E and, with the graph on, the GCN
    /// word embeddings for the behaviour stream.
    pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<(Featurizer, FitReport)> {
        let lexicons = match &cfg.lexicon_dir {
            Some(dir) => LexiconSet::from_dir(dir)?,
            None => LexiconSet::builtin(),
        };
        lexicons.validate()?;
        let m = &cfg.model;
        let mut report = FitReport::default();

        let generalised = if m.aspects.generalised {
            let mut words: BTreeSet<String> = train.records.iter().flat_map(|r| tokenize_words(&r.text)).collect();
            for set in [&lexicons.masculine, &lexicons.feminine, &lexicons.neutral, &lexicons.stereotype] {
                words.extend(set.iter().cloned());
            }
            let init = EmbeddingTable::random(words.iter().map(String::as_str), m.dims.generalised, cfg.seed ^ 0x6e6);
            let out = train_debias(&init, &lexicons, &cfg.debias)?;
            info!("debiased {} words, final loss {:.4}", out.table.len(), out.losses.last().copied().unwrap_or(0.0));
            Some(out.table)
        } else {
            None
        };

        let explicit = if m.aspects.explicit {
            let dict = match &cfg.dictionary {
                Some(p) => DefinitionDictionary::load(p)?,
                None => DefinitionDictionary::builtin(),
            };
            let pairs = extract_dict_pairs(&dict);
            let mut vocab = dict.vocabulary();
            vocab.extend(lexicons.profanity.iter().cloned());
            let mut dict_cfg = cfg.dict;
            dict_cfg.dim = m.dims.explicit;
            let table = train_dict_embeddings(&pairs, &vocab, &dict_cfg)?;
            info!(
                "dictionary embeddings: {} words, {} strong and {} weak pairs",
                table.len(),
                pairs.strong.len(),
                pairs.weak.len()
            );
            Some(table)
        } else {
            None
        };

        let behaviour = if m.use_graph {
            let corpus = train.corpus()?;
            let mut gcn = cfg.gcn.clone();
            gcn.hidden = m.dims.behaviour;
            gcn.seed ^= cfg.seed;
            let out = train_gcn(&corpus, &gcn)?;
            report.gcn_label_source = Some(out.label_source);
            report.gcn_train_accuracy = Some(out.train_accuracy);
            report.gcn_labels = out.labels.len();
            report.graph_words = out.vocab.num_words();
            info!(
                "gcn: {} nodes, {} labels ({:?}), train accuracy {:.3}",
                out.vocab.num_nodes(),
                out.labels.len(),
                out.label_source,
                out.train_accuracy
            );
            Some(out.table.word_table(&out.vocab)?)
        } else {
            None
        };

        Ok((
            Featurizer {
                lexicons,
                aspects: m.aspects,
                dims: m.dims.clone(),
                max_len: m.encoder.max_len,
                generalised,
                explicit,
                behaviour,
            },
            report,
        ))
    }

    pub fn featurize(&self, text: &str) -> Result<Sample> {
        let seq = tokenize_fixed(text, self.max_len);
        let a = &self.aspects;
        let d = &self.dims;
        let directed = if a.directed {
            Some(embed_directed(&seq, &self.lexicons, d.directed)?.matrix)
        } else {
            None
        };
        let generalised = match (&self.generalised, a.generalised) {
            (Some(t), true) => Some(embed_generalised(&seq, t, d.generalised)?.matrix),
            _ => None,
        };
        let explicit = match (&self.explicit, a.explicit) {
            (Some(t), true) => Some(embed_explicit(&seq, t, d.explicit)?.matrix),
            _ => None,
        };
        let implicit = if a.implicit {
            Some(embed_implicit(&seq, &self.lexicons, d.implicit)?.matrix)
        } else {
            None
        };
        let behaviour = match &self.behaviour {
            Some(t) => Some(embed_lookup(&seq, t, d.behaviour, Aspect::Generalised)?.matrix),
            None => None,
        };
        Ok(Sample {
            directed,
            generalised,
            explicit,
            implicit,
            behaviour,
            mask: (0..seq.len()).map(|i| !seq.is_pad(i)).collect(),
        })
    }
}
