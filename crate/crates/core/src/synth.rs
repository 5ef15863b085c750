//! Deterministic synthetic definition corpora.
//!
//! Two invented source languages share one byte-level vocabulary: language A
//! uses Latin syllables with spaces, language B uses CJK characters without
//! them. Definitions are always simple English, so a model trained on A-side
//! entries can be probed with B-side inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::DefinitionEntry;
use crate::wordlist::WordList;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthLang {
    /// Latin syllable pseudo-language, tag `qaa`.
    A,
    /// CJK pseudo-language without word spacing, tag `qab`.
    B,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub lang: SynthLang,
    pub entries: usize,
    pub seed: u64,
    /// Fraction of definitions salted with a word outside the defining
    /// vocabulary (the filter's drop targets).
    pub rare_fraction: f64,
}

const SYLLABLES: [&str; 10] = ["ta", "ri", "mo", "ku", "ne", "pa", "si", "lo", "da", "vu"];
const CJK: [char; 10] = ['山', '水', '火', '木', '金', '土', '日', '月', '雨', '風'];

const DETERMINERS: [&str; 2] = ["a", "the"];
const ADJECTIVES: [&str; 10] = [
    "small", "big", "fast", "slow", "red", "blue", "old", "new", "good", "hot",
];
const NOUNS: [&str; 10] = [
    "thing", "animal", "person", "place", "tool", "plant", "food", "sound", "game", "stone",
];
const VERBS: [&str; 8] = [
    "moves", "makes", "holds", "keeps", "shows", "finds", "takes", "gives",
];
const OBJECTS: [&str; 8] = [
    "water", "light", "food", "noise", "heat", "rain", "sand", "grass",
];
const RARE: [&str; 6] = [
    "gryphon", "obsidian", "zephyr", "labyrinth", "quasar", "palimpsest",
];

/// Unique headword for an index: three-syllable (A) or three-character (B)
/// code built from the index digits.
pub fn headword(lang: SynthLang, index: usize) -> String {
    let digits = word_digits(index);
    match lang {
        SynthLang::A => digits.map(|d| SYLLABLES[d]).concat(),
        SynthLang::B => digits.map(|d| CJK[d]).iter().collect(),
    }
}

fn word_digits(index: usize) -> [usize; 3] {
    [(index / 100) % 10, (index / 10) % 10, index % 10]
}

fn example_sentence(lang: SynthLang, word: &str, rng: &mut ChaCha8Rng) -> String {
    match lang {
        SynthLang::A => {
            let templates = [
                format!("no {word} ka"),
                format!("se {word} bo lu"),
                format!("{word} mi ru"),
                format!("we pa {word} fo"),
            ];
            templates[rng.gen_range(0..templates.len())].clone()
        }
        SynthLang::B => {
            let templates = [
                format!("我看見{word}了"),
                format!("{word}在這裡"),
                format!("他有一個{word}"),
                format!("這是{word}吧"),
            ];
            templates[rng.gen_range(0..templates.len())].clone()
        }
    }
}

/// The definition is a deterministic function of the headword's digits, so
/// a model that reads the word structure can generalize to unseen words:
/// digit 2 picks the adjective, digit 3 the noun, digit 1 the verb frame.
fn definition(index: usize, rng: &mut ChaCha8Rng, rare: bool) -> String {
    let [d1, d2, d3] = word_digits(index);
    let det = DETERMINERS[d1 % 2];
    let adj = ADJECTIVES[d2];
    let noun = if rare {
        RARE[rng.gen_range(0..RARE.len())]
    } else {
        NOUNS[d3]
    };
    let verb = VERBS[d1 % VERBS.len()];
    let obj = OBJECTS[d2 % OBJECTS.len()];
    match (d1 + d2 + d3) % 3 {
        0 => format!("{det} {adj} {noun}"),
        1 => format!("{det} {adj} {noun} that {verb} {obj}"),
        _ => format!("{det} {noun} that {verb} {obj}"),
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<DefinitionEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lang_tag = match cfg.lang {
        SynthLang::A => "qaa",
        SynthLang::B => "qab",
    };
    (0..cfg.entries)
        .map(|i| {
            let word = headword(cfg.lang, i);
            let example = example_sentence(cfg.lang, &word, &mut rng);
            let rare = rng.gen_bool(cfg.rare_fraction.clamp(0.0, 1.0));
            let def = definition(i, &mut rng, rare);
            DefinitionEntry::new(word, example, def, lang_tag)
                .expect("synthetic entries satisfy the invariants")
        })
        .collect()
}

/// Every content word the ordinary definition templates can produce; plays
/// the controlled-defining-vocabulary role in tests.
pub fn definition_vocabulary() -> WordList {
    let words = ADJECTIVES
        .iter()
        .chain(NOUNS.iter())
        .chain(VERBS.iter())
        .chain(OBJECTS.iter());
    WordList::new("synthetic-defining-vocabulary", words)
}

/// Words the rare-salted definitions use; all outside the defining vocabulary.
pub fn rare_vocabulary() -> Vec<&'static str> {
    RARE.to_vec()
}

/// Tokenizer-training text: all fields of all entries, one entry per line.
pub fn training_text(entries: &[DefinitionEntry]) -> String {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.word);
        text.push(' ');
        text.push_str(&e.example);
        text.push(' ');
        text.push_str(&e.definition);
        text.push('\n');
    }
    text
}

/// A/B mixed text so one vocabulary covers both languages.
pub fn shared_tokenizer_text(seed: u64) -> String {
    let a = generate(&SynthConfig {
        lang: SynthLang::A,
        entries: 120,
        seed,
        rare_fraction: 0.0,
    });
    let b = generate(&SynthConfig {
        lang: SynthLang::B,
        entries: 120,
        seed: seed.wrapping_add(1),
        rare_fraction: 0.0,
    });
    format!("{}{}", training_text(&a), training_text(&b))
}
