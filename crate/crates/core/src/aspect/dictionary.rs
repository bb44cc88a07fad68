//! Definition dictionaries, strong/weak word pairs and the pair-driven
//! embedding trainer behind the explicit aspect.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aspect::table::cosine;
use crate::aspect::EmbeddingTable;
use crate::error::{Error, Result};
use crate::text::tokenize_words;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionDictionary {
    entries: BTreeMap<String, Vec<String>>,
}

fn is_wordlike(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

impl DefinitionDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a headword; its definition is tokenised with the pipeline
    /// tokenizer and punctuation-only tokens are dropped.
    pub fn insert(&mut self, headword: &str, definition: &str) -> Result<()> {
        let head = headword.trim().to_lowercase();
        if head.is_empty() {
            return Err(Error::Input("empty headword".into()));
        }
        if self.entries.contains_key(&head) {
            return Err(Error::Input(format!("duplicate headword {head:?}")));
        }
        let def = tokenize_words(definition).into_iter().filter(|t| is_wordlike(t)).collect();
        self.entries.insert(head, def);
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut d = Self::new();
        for (h, def) in pairs {
            d.insert(h, def)?;
        }
        Ok(d)
    }

    /// `headword<TAB>definition` lines.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut d = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (head, def) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: "expected headword<TAB>definition".into(),
            })?;
            d.insert(head, def).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn definition(&self, headword: &str) -> Option<&[String]> {
        self.entries.get(headword).map(Vec::as_slice)
    }

    pub fn headwords(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Headwords plus every word used in a definition.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut v: BTreeSet<String> = self.entries.keys().cloned().collect();
        for def in self.entries.values() {
            v.extend(def.iter().cloned());
        }
        v
    }

    /// A small built-in English dictionary covering the built-in profanity
    /// lexicon and some everyday words.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DICTIONARY, Path::new("<builtin>")).expect("built-in dictionary parses")
    }
}

const BUILTIN_DICTIONARY: &str = "\
idiot\ta stupid person ; a fool or moron
moron\ta stupid person ; an idiot
stupid\tlacking intelligence ; like an idiot or moron
fool\ta person who acts without sense ; an idiot
dumb\tstupid ; lacking intelligence
imbecile\ta stupid person ; an idiot
loser\ta person who fails ; a pathetic failure
pathetic\tso weak it makes you feel pity ; like a loser
failure\tlack of success ; a loser
scum\ta worthless and despicable person ; trash
trash\tworthless rubbish ; garbage or scum
garbage\trubbish ; trash
rubbish\tworthless material ; trash or garbage
jerk\tan unpleasant and rude person
rude\tnot polite ; offensive
offensive\tcausing anger ; rude or insulting
insult\tan offensive remark ; to speak rudely
clown\ta foolish person ; a fool
bitch\ta malicious woman ; an offensive insult
bastard\tan unpleasant person ; an offensive insult
freak\ta person regarded as strange ; an insult
crap\trubbish ; worthless nonsense
damn\tcondemn ; a curse word
person\ta human being
human\ta person
happy\tfeeling joy ; glad
glad\thappy ; pleased
joy\ta feeling of great happiness
weather\tthe state of the air outside ; sun or rain
sun\tthe star that gives light to the earth
rain\twater falling from clouds ; weather
";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPairSet {
    /// Unordered pairs stored as `(smaller, larger)`.
    pub strong: BTreeSet<(String, String)>,
    pub weak: BTreeSet<(String, String)>,
}

pub fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl WordPairSet {
    pub fn is_empty(&self) -> bool {
        self.strong.is_empty() && self.weak.is_empty()
    }

    pub fn words(&self) -> BTreeSet<String> {
        self.strong
            .iter()
            .chain(&self.weak)
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        let p = ordered_pair(a, b);
        self.strong.contains(&p) || self.weak.contains(&p)
    }
}

/// `{a, b}` is strong when each word occurs in the other's definition and
/// weak when exactly one does. Self-references are ignored.
pub fn extract_dict_pairs(dict: &DefinitionDictionary) -> WordPairSet {
    // (a in def(b), b in def(a)) for a < b
    let mut links: HashMap<(String, String), (bool, bool)> = HashMap::new();
    for head in dict.headwords() {
        let def: BTreeSet<&str> = dict.definition(head).unwrap_or_default().iter().map(String::as_str).collect();
        for w in def {
            if w == head {
                continue;
            }
            let key = ordered_pair(head, w);
            let entry = links.entry(key).or_default();
            // w appears in def(head)
            if w < head {
                entry.0 = true;
            } else {
                entry.1 = true;
            }
        }
    }
    let mut pairs = WordPairSet::default();
    for (key, (ab, ba)) in links {
        if ab && ba {
            pairs.strong.insert(key);
        } else {
            pairs.weak.insert(key);
        }
    }
    pairs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictTrainConfig {
    pub dim: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub beta_strong: f64,
    pub beta_weak: f64,
    pub beta_negative: f64,
    /// Random non-pair words drawn per word per step.
    pub negatives: usize,
}

impl Default for DictTrainConfig {
    fn default() -> Self {
        DictTrainConfig {
            dim: 16,
            steps: 300,
            lr: 0.05,
            seed: 17,
            beta_strong: 1.0,
            beta_weak: 0.5,
            beta_negative: 0.5,
            negatives: 2,
        }
    }
}

/// Adds `scale · ∂cos(a, b)/∂a` into `grad`.
fn add_cos_grad(grad: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let c = cosine(a, b);
    for j in 0..a.len() {
        grad[j] += scale * (b[j] / (na * nb) - c * a[j] / (na * na));
    }
}

/// Gradient descent on
/// `Σ_strong β_s (1 − cos) + Σ_weak β_w (1 − cos) + Σ_neg β_n max(0, cos)`
/// where the negative term draws `negatives` random non-pair partners per
/// word per step.
pub fn train_dict_embeddings(
    pairs: &WordPairSet,
    vocab: &BTreeSet<String>,
    config: &DictTrainConfig,
) -> Result<EmbeddingTable> {
    if config.beta_strong <= config.beta_weak {
        return Err(Error::Config("strong-pair weight must exceed the weak-pair weight".into()));
    }
    for w in pairs.words() {
        if !vocab.contains(&w) {
            return Err(Error::Input(format!("pair word {w:?} is not in the vocabulary")));
        }
    }
    let words: Vec<&str> = vocab.iter().map(String::as_str).collect();
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let mut table = EmbeddingTable::random(words.iter().copied(), config.dim, config.seed);
    let mut vecs: Vec<Vec<f64>> = words.iter().map(|w| table.get(w).unwrap().to_vec()).collect();

    let to_idx = |set: &BTreeSet<(String, String)>| -> Vec<(usize, usize)> {
        set.iter().map(|(a, b)| (index[a.as_str()], index[b.as_str()])).collect()
    };
    let strong = to_idx(&pairs.strong);
    let weak = to_idx(&pairs.weak);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1c7);
    let n = words.len();

    for _ in 0..config.steps {
        let mut grads = vec![vec![0.0; config.dim]; n];
        for (list, beta) in [(&strong, config.beta_strong), (&weak, config.beta_weak)] {
            for &(a, b) in list.iter() {
                // minimise beta (1 - cos): descend along +beta ∂cos
                add_cos_grad(&mut grads[a], &vecs[a], &vecs[b], -beta);
                add_cos_grad(&mut grads[b], &vecs[b], &vecs[a], -beta);
            }
        }
        if config.negatives > 0 && n > 1 {
            for a in 0..n {
                let mut drawn = 0;
                let mut attempts = 0;
                while drawn < config.negatives && attempts < 10 * config.negatives {
                    attempts += 1;
                    let b = rng.gen_range(0..n);
                    if b == a || pairs.contains(words[a], words[b]) {
                        continue;
                    }
                    drawn += 1;
                    if cosine(&vecs[a], &vecs[b]) > 0.0 {
                        add_cos_grad(&mut grads[a], &vecs[a], &vecs[b], config.beta_negative);
                        add_cos_grad(&mut grads[b], &vecs[b], &vecs[a], config.beta_negative);
                    }
                }
            }
        }
        for (v, g) in vecs.iter_mut().zip(&grads) {
            for (x, d) in v.iter_mut().zip(g) {
                *x -= config.lr * d;
            }
        }
        if vecs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged("dictionary embedding produced non-finite values".into()));
        }
    }
    for (w, v) in words.iter().zip(vecs) {
        table.insert(*w, v)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(entries: &[(&str, &str)]) -> DefinitionDictionary {
        DefinitionDictionary::from_pairs(entries.iter().copied()).unwrap()
    }

    fn pairs(list: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        list.iter().map(|(a, b)| ordered_pair(a, b)).collect()
    }

    #[test]
    fn hand_enumerated_example() {
        let p = extract_dict_pairs(&dict(&[("a", "b c"), ("b", "a"), ("c", "b")]));
        assert_eq!(p.strong, pairs(&[("a", "b")]));
        assert_eq!(p.weak, pairs(&[("a", "c"), ("b", "c")]));
    }

    #[test]
    fn empty_definitions_give_no_pairs() {
        let p = extract_dict_pairs(&dict(&[("a", ""), ("b", "")]));
        assert!(p.is_empty());
    }

    #[test]
    fn no_mutual_inclusion_means_no_strong_pairs() {
        let p = extract_dict_pairs(&dict(&[("a", "b"), ("b", "c"), ("c", "d")]));
        assert!(p.strong.is_empty());
        assert_eq!(p.weak.len(), 3);
    }

    #[test]
    fn self_reference_is_ignored() {
        let p = extract_dict_pairs(&dict(&[("a", "a b"), ("b", "a")]));
        assert_eq!(p.strong, pairs(&[("a", "b")]));
        assert!(p.weak.is_empty());
    }

    #[test]
    fn duplicate_headword_and_bad_lines() {
        let mut d = dict(&[("a", "b")]);
        assert!(d.insert("A", "c").is_err());
        let err = DefinitionDictionary::parse("a\tb\nno tab here\n", Path::new("d.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn no_pairs_no_negatives_leaves_init() {
        let vocab: BTreeSet<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let cfg = DictTrainConfig {
            negatives: 0,
            ..Default::default()
        };
        let t = train_dict_embeddings(&WordPairSet::default(), &vocab, &cfg).unwrap();
        let init = EmbeddingTable::random(vocab.iter().map(String::as_str), cfg.dim, cfg.seed);
        assert_eq!(t, init);
    }

    #[test]
    fn unknown_pair_word_rejected() {
        let p = extract_dict_pairs(&dict(&[("a", "b")]));
        let vocab: BTreeSet<String> = ["a"].iter().map(|s| s.to_string()).collect();
        assert!(train_dict_embeddings(&p, &vocab, &DictTrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let d = DefinitionDictionary::builtin();
        let p = extract_dict_pairs(&d);
        let v = d.vocabulary();
        let cfg = DictTrainConfig {
            steps: 20,
            ..Default::default()
        };
        assert_eq!(
            train_dict_embeddings(&p, &v, &cfg).unwrap(),
            train_dict_embeddings(&p, &v, &cfg).unwrap()
        );
    }
}
