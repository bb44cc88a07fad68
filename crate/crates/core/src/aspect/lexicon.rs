//! Word lists used by the feature embedders and the debiasing trainer.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LexiconSet {
    pub gazetteer: BTreeSet<String>,
    pub second_person: BTreeSet<String>,
    pub masculine: BTreeSet<String>,
    pub feminine: BTreeSet<String>,
    pub neutral: BTreeSet<String>,
    pub stereotype: BTreeSet<String>,
    pub profanity: BTreeSet<String>,
    /// Literal marker phrases, lowercase, tokens separated by single spaces.
    pub sarcasm_markers: Vec<String>,
    /// Regular expressions matched against single lowercase tokens.
    pub sarcasm_patterns: Vec<String>,
    pub positive_words: BTreeSet<String>,
    pub negations: BTreeSet<String>,
    #[serde(skip)]
    compiled: OnceLock<Vec<Regex>>,
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl LexiconSet {
    /// Small built-in English lexicons.
    pub fn builtin() -> Self {
        LexiconSet {
            gazetteer: set(&[
                "obama", "trump", "hillary", "blm", "cnn", "fox", "nasa", "google", "twitter",
                "facebook", "london", "texas", "police", "congress", "senate", "biden", "bernie",
                "microsoft", "amazon", "paris",
            ]),
            second_person: set(&[
                "you", "your", "yours", "yourself", "yourselves", "u", "ur", "you're", "youre", "ya",
                "y'all",
            ]),
            masculine: set(&[
                "he", "him", "his", "man", "men", "boy", "boys", "father", "king", "husband",
                "brother", "son", "male", "guy", "mr",
            ]),
            feminine: set(&[
                "she", "her", "hers", "woman", "women", "girl", "girls", "mother", "queen", "wife",
                "sister", "daughter", "female", "lady", "mrs", "fems",
            ]),
            neutral: set(&[
                "person", "people", "they", "them", "doctor", "teacher", "student", "citizen",
                "human", "friend", "kid", "parent",
            ]),
            stereotype: set(&[
                "kitchen", "nurse", "engineer", "secretary", "boss", "homemaker", "programmer",
                "housekeeper", "receptionist", "pilot",
            ]),
            profanity: set(&[
                "idiot", "moron", "stupid", "bitch", "bastard", "crap", "damn", "loser", "scum",
                "trash", "dumb", "jerk", "pathetic", "freak", "imbecile", "garbage", "clown",
            ]),
            sarcasm_markers: [
                "yeah right", "oh great", "as if", "thanks a lot", "just what i needed", "how nice",
                "totally", "/s", "wow",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            sarcasm_patterns: vec![r"^(ha){2,}$".into(), r"^lo+l$".into(), r"^sure+$".into()],
            positive_words: set(&[
                "great", "wonderful", "love", "nice", "amazing", "brilliant", "sweet", "perfect",
                "fantastic", "best", "good", "lovely", "genius",
            ]),
            negations: set(&[
                "not", "no", "never", "nothing", "hardly", "don't", "isn't", "wasn't", "aren't",
                "can't", "won't", "doesn't", "didn't",
            ]),
            compiled: OnceLock::new(),
        }
    }

    /// Gender word sets must be mutually exclusive and patterns must compile.
    pub fn validate(&self) -> Result<()> {
        let groups = [
            ("masculine", &self.masculine),
            ("feminine", &self.feminine),
            ("neutral", &self.neutral),
            ("stereotype", &self.stereotype),
        ];
        for (i, (na, a)) in groups.iter().enumerate() {
            for (nb, b) in &groups[i + 1..] {
                if let Some(w) = a.intersection(b).next() {
                    return Err(Error::Config(format!("word {w:?} is in both the {na} and {nb} sets")));
                }
            }
        }
        for p in &self.sarcasm_patterns {
            Regex::new(p).map_err(|e| Error::Config(format!("bad sarcasm pattern {p:?}: {e}")))?;
        }
        Ok(())
    }

    pub(crate) fn patterns(&self) -> &[Regex] {
        self.compiled.get_or_init(|| {
            self.sarcasm_patterns
                .iter()
                .filter_map(|p| Regex::new(p).ok())
                .collect()
        })
    }

    /// Reads lexicons from `dir`. Each of `gazetteer.txt`, `second_person.txt`,
    /// `masculine.txt`, `feminine.txt`, `neutral.txt`, `stereotype.txt`,
    /// `profanity.txt`, `sarcasm.txt`, `positive.txt` and `negation.txt`
    /// replaces the built-in list when present. In `sarcasm.txt` lines
    /// starting with `re:` are regular expressions.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut lex = Self::builtin();
        let slots: [(&str, &mut BTreeSet<String>); 9] = [
            ("gazetteer.txt", &mut lex.gazetteer),
            ("second_person.txt", &mut lex.second_person),
            ("masculine.txt", &mut lex.masculine),
            ("feminine.txt", &mut lex.feminine),
            ("neutral.txt", &mut lex.neutral),
            ("stereotype.txt", &mut lex.stereotype),
            ("profanity.txt", &mut lex.profanity),
            ("positive.txt", &mut lex.positive_words),
            ("negation.txt", &mut lex.negations),
        ];
        for (file, slot) in slots {
            let path = dir.join(file);
            if path.exists() {
                *slot = read_list(&path)?.into_iter().collect();
            }
        }
        let sarcasm = dir.join("sarcasm.txt");
        if sarcasm.exists() {
            lex.sarcasm_markers.clear();
            lex.sarcasm_patterns.clear();
            for entry in read_lines(&sarcasm)? {
                match entry.strip_prefix("re:") {
                    Some(p) => lex.sarcasm_patterns.push(p.trim().to_string()),
                    None => lex.sarcasm_markers.push(entry.to_lowercase()),
                }
            }
        }
        lex.validate()?;
        Ok(lex)
    }
}

/// Trimmed non-empty lines, whitespace runs collapsed; lines starting
/// with `# ` are comments.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("# "))
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect())
}

/// One lowercase entry per line.
pub fn read_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_lines(path)?.into_iter().map(|l| l.to_lowercase()).collect())
}
