//! Definition datasets: line-delimited records, word-disjoint splits, the
//! defining-vocabulary filter, and corpus statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wordlist::WordList;

/// One (headword, example sentence, definition, language) record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefinitionEntry {
    pub word: String,
    pub example: String,
    pub definition: String,
    pub lang: String,
}

impl DefinitionEntry {
    pub fn new(
        word: impl Into<String>,
        example: impl Into<String>,
        definition: impl Into<String>,
        lang: impl Into<String>,
    ) -> Result<Self> {
        let entry = DefinitionEntry {
            word: word.into(),
            example: example.into(),
            definition: definition.into(),
            lang: lang.into(),
        };
        entry.validate()?;
        Ok(entry)
    }

    /// Field invariants: all three text fields non-empty, and the example
    /// must contain the headword (case-folded, so alphabetic scripts match
    /// regardless of casing).
    pub fn validate(&self) -> Result<()> {
        if self.word.is_empty() || self.example.is_empty() || self.definition.is_empty() {
            return Err(Error::contract(
                "entry fields word/example/definition must be non-empty",
            ));
        }
        if !self
            .example
            .to_lowercase()
            .contains(&self.word.to_lowercase())
        {
            return Err(Error::contract(format!(
                "example does not contain the headword {:?}",
                self.word
            )));
        }
        Ok(())
    }
}

/// Load one-JSON-object-per-line records. Blank lines are skipped and order
/// is preserved; the line number accompanies every error.
pub fn load_entries(path: &Path) -> Result<Vec<DefinitionEntry>> {
    parse_entries(&std::fs::read_to_string(path)?)
}

pub fn parse_entries(text: &str) -> Result<Vec<DefinitionEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let entry: DefinitionEntry =
            serde_json::from_str(line).map_err(|e| match e.classify() {
                serde_json::error::Category::Data => Error::Schema {
                    line: i + 1,
                    message: e.to_string(),
                },
                _ => Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                },
            })?;
        entry.validate().map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn entries_to_text(entries: &[DefinitionEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("plain string fields"));
        out.push('\n');
    }
    out
}

pub fn save_entries(path: &Path, entries: &[DefinitionEntry]) -> Result<()> {
    crate::fsio::atomic_write(path, entries_to_text(entries).as_bytes())
}

/// Train/valid/test parts with pairwise word-disjoint headword sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<DefinitionEntry>,
    pub valid: Vec<DefinitionEntry>,
    pub test: Vec<DefinitionEntry>,
}

impl DatasetSplit {
    pub fn parts(&self) -> [(&str, &[DefinitionEntry]); 3] {
        [
            ("train", self.train.as_slice()),
            ("valid", self.valid.as_slice()),
            ("test", self.test.as_slice()),
        ]
    }
}

/// Assign whole headword groups to train/valid/test.
///
/// Distinct headwords are collected in order of first appearance and shuffled
/// by Fisher-Yates under `ChaCha8Rng::seed_from_u64(seed)`; part boundaries
/// are `round(cumulative_ratio * words)`. Entry order within a part follows
/// the input. A headword never lands in two parts.
pub fn split_by_word(
    entries: &[DefinitionEntry],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r1, r2, r3) = ratios;
    if r1 <= 0.0 || r2 <= 0.0 || r3 <= 0.0 || (r1 + r2 + r3 - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let mut words: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for entry in entries {
        if seen.insert(entry.word.as_str()) {
            words.push(entry.word.as_str());
        }
    }
    if words.is_empty() {
        return Err(Error::contract("split_by_word: no entries to split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    words.shuffle(&mut rng);

    let n = words.len();
    let b1 = ((r1 * n as f64).round() as usize).min(n);
    let b2 = (((r1 + r2) * n as f64).round() as usize).clamp(b1, n);
    let part_of: BTreeMap<&str, usize> = words
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, if i < b1 { 0 } else if i < b2 { 1 } else { 2 }))
        .collect();

    let mut split = DatasetSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for entry in entries {
        match part_of[entry.word.as_str()] {
            0 => split.train.push(entry.clone()),
            1 => split.valid.push(entry.clone()),
            _ => split.test.push(entry.clone()),
        }
    }
    Ok(split)
}

/// An entry that failed the defining-vocabulary check, with the offending
/// definition token as the witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedEntry {
    pub entry: DefinitionEntry,
    pub witness: String,
}

/// Keep an entry iff every alphabetic token of its definition (case-folded)
/// is in `allow` or `function_words`. Tokens containing digits, and bare
/// punctuation, always pass. Order is preserved and kept + dropped partition
/// the input.
pub fn filter_by_defining_vocabulary(
    entries: &[DefinitionEntry],
    allow: &WordList,
    function_words: &WordList,
) -> Result<(Vec<DefinitionEntry>, Vec<DroppedEntry>)> {
    if allow.is_empty() || function_words.is_empty() {
        return Err(Error::contract(
            "filter_by_defining_vocabulary: word lists must be non-empty",
        ));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for entry in entries {
        match definition_witness(&entry.definition, allow, function_words) {
            None => kept.push(entry.clone()),
            Some(witness) => dropped.push(DroppedEntry {
                entry: entry.clone(),
                witness,
            }),
        }
    }
    Ok((kept, dropped))
}

/// First definition token outside `allow ∪ function_words`, if any.
pub fn definition_witness(
    definition: &str,
    allow: &WordList,
    function_words: &WordList,
) -> Option<String> {
    for raw in definition.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            continue; // bare punctuation
        }
        let alphabetic = trimmed
            .chars()
            .all(|c| c.is_alphabetic() || c == '\'' || c == '-');
        if !alphabetic {
            continue; // numerals and mixed tokens always pass
        }
        let folded = trimmed.to_lowercase();
        if !allow.contains(&folded) && !function_words.contains(&folded) {
            return Some(folded);
        }
    }
    None
}

/// Table-style corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub words: usize,
    pub entries: usize,
    pub avg_example_len: f64,
    pub avg_definition_len: f64,
}

/// Length of one text field: whitespace tokens when it contains an ASCII
/// space, character count otherwise (so unsegmented scripts still measure).
pub fn text_len_units(text: &str) -> usize {
    if text.contains(' ') {
        text.split_whitespace().count()
    } else {
        text.chars().count()
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn dataset_stats(entries: &[DefinitionEntry]) -> DatasetStats {
    if entries.is_empty() {
        return DatasetStats {
            words: 0,
            entries: 0,
            avg_example_len: 0.0,
            avg_definition_len: 0.0,
        };
    }
    let words = entries
        .iter()
        .map(|e| e.word.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    let n = entries.len() as f64;
    let example_total: usize = entries.iter().map(|e| text_len_units(&e.example)).sum();
    let definition_total: usize = entries.iter().map(|e| text_len_units(&e.definition)).sum();
    DatasetStats {
        words,
        entries: entries.len(),
        avg_example_len: round2(example_total as f64 / n),
        avg_definition_len: round2(definition_total as f64 / n),
    }
}

/// Aligned text table over labelled stats rows.
pub fn stats_table(rows: &[(String, DatasetStats)]) -> String {
    let mut out = String::new();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(["dataset".len()].into_iter())
        .max()
        .unwrap_or(7);
    let _ = writeln!(
        out,
        "{:label_w$}  {:>8}  {:>8}  {:>8}  {:>8}",
        "dataset", "words", "entries", "exp.len", "def.len"
    );
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{:label_w$}  {:>8}  {:>8}  {:>8.2}  {:>8.2}",
            label, s.words, s.entries, s.avg_example_len, s.avg_definition_len
        );
    }
    out
}
