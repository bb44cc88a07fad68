//! Deterministic lexicon-feature embedders for the directed (per token) and
//! implicit (per sequence) aspects.

use crate::aspect::{Aspect, AspectMatrix, LexiconSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::TokenSeq;

pub const DIRECTED_FEATURES: usize = 4;
pub const IMPLICIT_FEATURES: usize = 4;

const DEFAULT_HASH_SEED: u64 = 0x5eed_d1ec_7ed0_0001;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Value in `[-1, 1)` derived from `(token, dim, seed)`.
fn hashed_feature(token: &str, dim: usize, seed: u64) -> f64 {
    let h = splitmix64(fnv1a(token) ^ seed ^ (dim as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn is_all_caps(raw: &str) -> bool {
    let letters: Vec<char> = raw.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase())
}

fn strip_sigil(token: &str) -> &str {
    token.strip_prefix('@').or_else(|| token.strip_prefix('#')).unwrap_or(token)
}

/// Per-token features: gazetteer hit, second-person pronoun, all caps,
/// `@` mention, then `dim - 4` hashed token-identity features. Padded
/// positions are zero rows.
pub fn embed_directed(seq: &TokenSeq, lex: &LexiconSet, dim: usize) -> Result<AspectMatrix> {
    embed_directed_seeded(seq, lex, dim, DEFAULT_HASH_SEED)
}

pub fn embed_directed_seeded(seq: &TokenSeq, lex: &LexiconSet, dim: usize, seed: u64) -> Result<AspectMatrix> {
    if seq.is_empty() {
        return Err(Error::Input("embed_directed: empty sequence".into()));
    }
    if dim < DIRECTED_FEATURES {
        return Err(Error::Config(format!("directed embedding needs at least {DIRECTED_FEATURES} dims, got {dim}")));
    }
    let n = seq.len();
    let mut m = Tensor::zeros(n, dim);
    for i in 0..n {
        if seq.is_pad(i) {
            continue;
        }
        let tok = seq.tokens[i].as_str();
        let raw = seq.raw_tokens[i].as_str();
        let row = m.row_mut(i);
        row[0] = f64::from(lex.gazetteer.contains(tok) || lex.gazetteer.contains(strip_sigil(tok)));
        row[1] = f64::from(lex.second_person.contains(tok));
        row[2] = f64::from(is_all_caps(raw));
        row[3] = f64::from(tok.len() > 1 && tok.starts_with('@'));
        for (j, v) in row.iter_mut().enumerate().skip(DIRECTED_FEATURES) {
            *v = hashed_feature(tok, j, seed);
        }
    }
    Ok(AspectMatrix::new(Aspect::Directed, m))
}

/// A letter repeated three or more times in a row ("sooo").
pub fn is_elongated(token: &str) -> bool {
    let mut prev = None;
    let mut run = 0;
    for c in token.chars() {
        if Some(c) == prev && c.is_alphabetic() {
            run += 1;
            if run >= 3 {
                return true;
            }
        } else {
            run = 1;
        }
        prev = Some(c);
    }
    false
}

fn is_punct_run(token: &str) -> bool {
    token.chars().count() >= 2 && token.chars().all(|c| c == '!' || c == '?')
}

/// Sequence-level sarcasm cues as a single `[1, dim]` row: elongated-word
/// count, `!`/`?` run count, sarcasm-marker hits, and positive words within
/// three tokens after a negation. Remaining dims are zero.
pub fn embed_implicit(seq: &TokenSeq, lex: &LexiconSet, dim: usize) -> Result<AspectMatrix> {
    if seq.is_empty() {
        return Err(Error::Input("embed_implicit: empty sequence".into()));
    }
    if dim < IMPLICIT_FEATURES {
        return Err(Error::Config(format!("implicit embedding needs at least {IMPLICIT_FEATURES} dims, got {dim}")));
    }
    let words: Vec<&str> = seq.words().collect();
    let mut row = vec![0.0; dim];

    row[0] = words.iter().filter(|w| is_elongated(w)).count() as f64;
    row[1] = words.iter().filter(|w| is_punct_run(w)).count() as f64;

    let mut hits = 0usize;
    for marker in &lex.sarcasm_markers {
        let parts: Vec<&str> = marker.split(' ').collect();
        if parts.is_empty() || parts.len() > words.len() {
            continue;
        }
        hits += words.windows(parts.len()).filter(|w| *w == parts.as_slice()).count();
    }
    let patterns = lex.patterns();
    hits += words
        .iter()
        .filter(|w| patterns.iter().any(|p| p.is_match(w)))
        .count();
    row[2] = hits as f64;

    let mut near = 0usize;
    for (i, w) in words.iter().enumerate() {
        if lex.positive_words.contains(*w) {
            let from = i.saturating_sub(3);
            if words[from..i].iter().any(|p| lex.negations.contains(*p)) {
                near += 1;
            }
        }
    }
    row[3] = near as f64;

    Ok(AspectMatrix::new(Aspect::Implicit, Tensor::row_vector(row)))
}
