//! Tokenisation into fixed-length token sequences.

use serde::{Deserialize, Serialize};

pub const PAD: &str = "<pad>";

/// Lowercased tokens plus their original spelling. Positions added by
/// padding are flagged in `padded`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub raw_tokens: Vec<String>,
    pub padded: Vec<bool>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_pad(&self, i: usize) -> bool {
        self.padded[i]
    }

    /// Number of non-pad positions.
    pub fn real_len(&self) -> usize {
        self.padded.iter().filter(|p| !**p).count()
    }

    /// Truncates from the right or pads to exactly `n` positions.
    pub fn fit(&self, n: usize) -> TokenSeq {
        let mut out = TokenSeq {
            tokens: self.tokens.iter().take(n).cloned().collect(),
            raw_tokens: self.raw_tokens.iter().take(n).cloned().collect(),
            padded: self.padded.iter().take(n).copied().collect(),
        };
        while out.tokens.len() < n {
            out.tokens.push(PAD.to_string());
            out.raw_tokens.push(PAD.to_string());
            out.padded.push(true);
        }
        out
    }

    /// 1.0 for real tokens, 0.0 for padding.
    pub fn mask(&self) -> Vec<f64> {
        self.padded.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect()
    }

    /// Real (non-pad) lowercase tokens.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .zip(&self.padded)
            .filter(|(_, p)| !**p)
            .map(|(t, _)| t.as_str())
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits one whitespace-delimited chunk into leading punctuation, core
/// and trailing punctuation. `@` and `#` directly before the core stay
/// attached to it.
fn split_chunk(chunk: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let first = chars.iter().position(|&(_, c)| is_word_char(c));
    let Some(first) = first else {
        return vec![chunk];
    };
    let last = chars.iter().rposition(|&(_, c)| is_word_char(c)).unwrap_or(first);
    let mut core_start = first;
    if first > 0 && matches!(chars[first - 1].1, '@' | '#') {
        core_start = first - 1;
    }
    let start_byte = chars[core_start].0;
    let end_byte = chars[last].0 + chars[last].1.len_utf8();
    let mut out = Vec::with_capacity(3);
    if start_byte > 0 {
        out.push(&chunk[..start_byte]);
    }
    out.push(&chunk[start_byte..end_byte]);
    if end_byte < chunk.len() {
        out.push(&chunk[end_byte..]);
    }
    out
}

/// Raw (original-case) tokens of `text`.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .flat_map(split_chunk)
        .map(str::to_string)
        .collect()
}

/// Lowercased tokens of `text`; empty text yields no tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    raw_tokens(text).iter().map(|t| t.to_lowercase()).collect()
}

/// Tokenises without padding. Empty text becomes a single pad token.
pub fn tokenize(text: &str) -> TokenSeq {
    let raw = raw_tokens(text);
    if raw.is_empty() {
        log::warn!("empty text tokenised to a single pad token");
        return TokenSeq {
            tokens: vec![PAD.to_string()],
            raw_tokens: vec![PAD.to_string()],
            padded: vec![true],
        };
    }
    TokenSeq {
        tokens: raw.iter().map(|t| t.to_lowercase()).collect(),
        padded: vec![false; raw.len()],
        raw_tokens: raw,
    }
}

/// Tokenises and fits to `max_len` positions.
pub fn tokenize_fixed(text: &str, max_len: usize) -> TokenSeq {
    tokenize(text).fit(max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_question_mark_is_split() {
        assert_eq!(tokenize("Really bitch really?").tokens, ["really", "bitch", "really", "?"]);
    }

    #[test]
    fn hashtags_and_mentions_survive() {
        assert_eq!(tokenize("#FeminismIsAwful").tokens, ["#feminismisawful"]);
        assert_eq!(tokenize("RT @asredasmyhair: Fems").tokens, ["rt", "@asredasmyhair", ":", "fems"]);
        assert_eq!(tokenize("thegeek_chick").tokens, ["thegeek_chick"]);
    }

    #[test]
    fn empty_text_is_one_pad() {
        let s = tokenize("");
        assert_eq!(s.tokens, [PAD]);
        assert_eq!(s.padded, [true]);
        assert_eq!(s.real_len(), 0);
    }

    #[test]
    fn raw_case_is_kept() {
        let s = tokenize("BLM is bad!!!");
        assert_eq!(s.raw_tokens, ["BLM", "is", "bad", "!!!"]);
        assert_eq!(s.tokens[0], "blm");
    }

    #[test]
    fn punctuation_only_chunks_and_wrapping() {
        assert_eq!(tokenize("(hello) :)").tokens, ["(", "hello", ")", ":)"]);
        assert_eq!(tokenize("Obama's").tokens, ["obama's"]);
    }

    #[test]
    fn fit_truncates_and_pads() {
        let s = tokenize("a b c");
        let short = s.fit(2);
        assert_eq!(short.tokens, ["a", "b"]);
        let long = s.fit(5);
        assert_eq!(long.tokens, ["a", "b", "c", PAD, PAD]);
        assert_eq!(long.padded, [false, false, false, true, true]);
        assert_eq!(long.mask(), [1.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
