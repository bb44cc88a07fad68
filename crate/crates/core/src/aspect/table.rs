//! Word → vector tables and their plain-text format
//! (`word v1 v2 ... vd`, one word per line, UTF-8).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    /// Uniform `[-0.5, 0.5)` vectors for `words`, in sorted word order.
    pub fn random<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut sorted: Vec<&str> = words.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Self::new(dim);
        for w in sorted {
            let v = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            table.vectors.insert(w.to_string(), v);
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Input(format!(
                "vector of length {} inserted into a {}-dimensional table",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub(crate) fn get_mut(&mut self, word: &str) -> Option<&mut Vec<f64>> {
        self.vectors.get_mut(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// The vector for `word`, or zeros when absent.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.get(word).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            let vector = parts
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(format!("bad number {p:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vector.is_empty() {
                return Err(parse_err("word without a vector".into()));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite value".into()));
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            if vector.len() != t.dim {
                return Err(parse_err(format!("expected {} values, found {}", t.dim, vector.len())));
            }
            t.vectors.insert(word.to_string(), vector);
        }
        table.ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: "empty embedding table".into(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oov_lookup_is_zero() {
        let t = EmbeddingTable::random(["a", "b"], 3, 1);
        assert_eq!(t.lookup("zzz"), vec![0.0; 3]);
        assert_eq!(t.lookup("a"), t.get("a").unwrap());
    }

    #[test]
    fn text_parse_errors_carry_line_numbers() {
        let err = EmbeddingTable::from_text("a 1 2\nb 1\n", Path::new("t.txt")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..6), seed in 0u64..1000) {
            let mut t = EmbeddingTable::random(["x", "y", "ünïcode"], values.len(), seed);
            t.insert("v", values).unwrap();
            let back = EmbeddingTable::from_text(&t.to_text(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
