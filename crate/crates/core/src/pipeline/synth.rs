//! Templated synthetic corpus with one class per abuse style.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aspect::LexiconSet;
use crate::error::{Error, Result};
use crate::pipeline::dataset::{Dataset, DatasetRecord};

/// Class kinds in the order they are added as `classes` grows.
pub const SYNTH_CLASSES: [&str; 4] = ["neutral", "explicit", "implicit", "directed"];

/// Synthetic users per class.
pub const USERS_PER_CLASS: usize = 3;

const NOUNS: &[&str] = &[
    "weather", "park", "coffee", "train", "book", "music", "garden", "city", "movie", "game", "dinner",
    "meeting", "weekend", "project", "show",
];
const ADJECTIVES: &[&str] = &["calm", "bright", "quiet", "busy", "warm", "fine", "long", "early", "late", "new"];
const FILLERS: &[&str] = &["today", "again", "this morning", "tonight", "right now", "as usual"];
const HANDLES: &[&str] = &["@sam", "@alex", "@jordan", "@casey", "@riley", "@morgan"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty word list")
}

fn pick_set<'a>(rng: &mut ChaCha8Rng, xs: &'a [String]) -> &'a str {
    xs.choose(rng).map(String::as_str).expect("non-empty lexicon")
}

fn elongate(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let chars: Vec<char> = word.chars().collect();
    let vowel = chars.iter().rposition(|c| "aeiou".contains(*c)).unwrap_or(chars.len() - 1);
    for (i, c) in chars.iter().enumerate() {
        out.push(*c);
        if i == vowel {
            for _ in 0..rng.gen_range(2..4) {
                out.push(*c);
            }
        }
    }
    out
}

struct Words {
    profanity: Vec<String>,
    markers: Vec<String>,
    positive: Vec<String>,
    entities: Vec<String>,
    second: Vec<String>,
}

fn sentence(kind: &str, w: &Words, rng: &mut ChaCha8Rng) -> String {
    let noun = pick(rng, NOUNS);
    let adj = pick(rng, ADJECTIVES);
    let filler = pick(rng, FILLERS);
    match kind {
        "neutral" => match rng.gen_range(0..3) {
            0 => format!("the {noun} was {adj} {filler}"),
            1 => format!("we went to the {noun} {filler} and it was {adj}"),
            _ => format!("looking forward to a {adj} {noun} {filler}"),
        },
        "explicit" => {
            let p1 = pick_set(rng, &w.profanity);
            let p2 = pick_set(rng, &w.profanity);
            match rng.gen_range(0..3) {
                0 => format!("what a {p1} {noun} , total {p2}"),
                1 => format!("this {noun} is run by a {p1} {filler}"),
                _ => format!("only a {p1} would like the {noun} , {p2} {filler}"),
            }
        }
        "implicit" => {
            let marker = pick_set(rng, &w.markers);
            let pos = pick_set(rng, &w.positive);
            let long = elongate(pick_set(rng, &w.positive), rng);
            match rng.gen_range(0..3) {
                0 => format!("{marker} another {noun} {filler} , {long} !!"),
                1 => format!("oh the {noun} is not {pos} at all , {marker} ?!"),
                _ => format!("{marker} , the {noun} was {long} {filler} lol"),
            }
        }
        "directed" => {
            let handle = pick(rng, HANDLES);
            let you = pick_set(rng, &w.second);
            let ent = pick_set(rng, &w.entities).to_uppercase();
            match rng.gen_range(0..3) {
                0 => format!("{handle} {you} should leave the {noun} to {ent}"),
                1 => format!("{ent} and {handle} , {you} ruined the {noun} {filler}"),
                _ => format!("hey {handle} nobody asked {you} about the {adj} {noun}"),
            }
        }
        other => unreachable!("unknown synthetic class {other}"),
    }
}

/// `classes × per_class` records, classes taken in [`SYNTH_CLASSES`]
/// order. Each class has [`USERS_PER_CLASS`] user ids of its own.
pub fn generate_synthetic(seed: u64, classes: usize, per_class: usize, lex: &LexiconSet) -> Result<Dataset> {
    if !(2..=SYNTH_CLASSES.len()).contains(&classes) {
        return Err(Error::Config(format!(
            "synthetic corpus supports 2 to {} classes, got {classes}",
            SYNTH_CLASSES.len()
        )));
    }
    if per_class < 1 {
        return Err(Error::Config("per-class count must be at least 1".into()));
    }
    let words = Words {
        profanity: lex.profanity.iter().cloned().collect(),
        markers: lex.sarcasm_markers.iter().filter(|m| m.chars().all(|c| c.is_alphabetic() || c == ' ')).cloned().collect(),
        positive: lex.positive_words.iter().cloned().collect(),
        entities: lex.gazetteer.iter().cloned().collect(),
        second: lex.second_person.iter().filter(|w| w.chars().all(char::is_alphabetic)).cloned().collect(),
    };
    for (name, list) in [
        ("profanity", &words.profanity),
        ("sarcasm marker", &words.markers),
        ("positive word", &words.positive),
        ("gazetteer", &words.entities),
        ("second-person", &words.second),
    ] {
        if list.is_empty() {
            return Err(Error::Input(format!("synthetic generation needs a non-empty {name} lexicon")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(classes * per_class);
    for k in 0..per_class {
        for kind in &SYNTH_CLASSES[..classes] {
            records.push(DatasetRecord {
                text: sentence(kind, &words, &mut rng),
                label: kind.to_string(),
                user_id: Some(format!("{kind}_user{}", k % USERS_PER_CLASS)),
            });
        }
    }
    Ok(Dataset::new(records))
}
