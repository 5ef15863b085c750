//! Lexical complexity of definition text: lexical density (LD), lexical
//! sophistication (LS), type/token ratio (TTR), and mean segmental TTR over
//! fixed-length segments (MSTTR).
//!
//! Lexical (content) words are identified by a function-word stoplist, and
//! the easy-word list plays the controlled-defining-vocabulary role; both
//! are plain data files, so other classifications can be substituted.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::wordlist::WordList;

pub const DEFAULT_SEGMENT_LEN: usize = 50;

/// Case-folded word tokens: punctuation stripped, split on whitespace.
pub fn tokenize_for_metrics(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Content-word proportion: tokens outside `function_words` over all tokens.
pub fn lexical_density(tokens: &[String], function_words: &WordList) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::contract("lexical_density of an empty token list"));
    }
    let lexical = tokens.iter().filter(|t| !function_words.contains(t)).count();
    Ok(lexical as f64 / tokens.len() as f64)
}

/// Advanced-word proportion: lexical tokens outside `easy_words` over all
/// lexical tokens.
pub fn lexical_sophistication(
    tokens: &[String],
    function_words: &WordList,
    easy_words: &WordList,
) -> Result<f64> {
    let lexical: Vec<&String> = tokens
        .iter()
        .filter(|t| !function_words.contains(t))
        .collect();
    if lexical.is_empty() {
        return Err(Error::contract(
            "lexical_sophistication needs at least one lexical token",
        ));
    }
    let sophisticated = lexical.iter().filter(|t| !easy_words.contains(t)).count();
    Ok(sophisticated as f64 / lexical.len() as f64)
}

/// Distinct tokens over total tokens.
pub fn ttr(tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::contract("ttr of an empty token list"));
    }
    let types: BTreeSet<&String> = tokens.iter().collect();
    Ok(types.len() as f64 / tokens.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsttrOutcome {
    pub value: f64,
    /// Number of full segments used; 0 when the fallback applied.
    pub segments: usize,
    /// True when the text was shorter than one segment and plain TTR was used.
    pub fallback: bool,
}

/// Mean TTR over consecutive non-overlapping segments of exactly
/// `segment_len` tokens; the trailing remainder is discarded. Texts shorter
/// than one segment fall back to plain TTR, flagged in the outcome.
pub fn msttr_detailed(tokens: &[String], segment_len: usize) -> Result<MsttrOutcome> {
    if tokens.is_empty() {
        return Err(Error::contract("msttr of an empty token list"));
    }
    if segment_len == 0 {
        return Err(Error::contract("msttr segment length must be positive"));
    }
    let segments = tokens.len() / segment_len;
    if segments == 0 {
        return Ok(MsttrOutcome {
            value: ttr(tokens)?,
            segments: 0,
            fallback: true,
        });
    }
    let mut total = 0.0;
    for s in 0..segments {
        total += ttr(&tokens[s * segment_len..(s + 1) * segment_len])?;
    }
    Ok(MsttrOutcome {
        value: total / segments as f64,
        segments,
        fallback: false,
    })
}

pub fn msttr(tokens: &[String], segment_len: usize) -> Result<f64> {
    Ok(msttr_detailed(tokens, segment_len)?.value)
}

/// One measurement row over a definition corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub ld: f64,
    pub ls: f64,
    pub ttr: f64,
    pub msttr: f64,
    pub tokens: usize,
    pub types: usize,
    pub lexical_tokens: usize,
    pub sophisticated_tokens: usize,
    pub msttr_segments: usize,
    pub msttr_fallback: bool,
}

/// Compute all four metrics over the concatenation of the definitions.
pub fn complexity_report(
    definitions: &[String],
    function_words: &WordList,
    easy_words: &WordList,
    segment_len: usize,
) -> Result<ComplexityReport> {
    if definitions.is_empty() {
        return Err(Error::contract("complexity_report of an empty corpus"));
    }
    let tokens: Vec<String> = definitions
        .iter()
        .flat_map(|d| tokenize_for_metrics(d))
        .collect();
    if tokens.is_empty() {
        return Err(Error::contract(
            "complexity_report: definitions contain no word tokens",
        ));
    }
    let ld = lexical_density(&tokens, function_words)?;
    let ls = lexical_sophistication(&tokens, function_words, easy_words)?;
    let ttr_value = ttr(&tokens)?;
    let ms = msttr_detailed(&tokens, segment_len)?;
    let types: BTreeSet<&String> = tokens.iter().collect();
    let lexical = tokens
        .iter()
        .filter(|t| !function_words.contains(t))
        .count();
    let sophisticated = tokens
        .iter()
        .filter(|t| !function_words.contains(t) && !easy_words.contains(t))
        .count();
    Ok(ComplexityReport {
        ld,
        ls,
        ttr: ttr_value,
        msttr: ms.value,
        tokens: tokens.len(),
        types: types.len(),
        lexical_tokens: lexical,
        sophisticated_tokens: sophisticated,
        msttr_segments: ms.segments,
        msttr_fallback: ms.fallback,
    })
}

/// Aligned table in LD / LS / TTR / MSTTR column order.
pub fn complexity_table(rows: &[(String, ComplexityReport)]) -> String {
    let mut out = String::new();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(["corpus".len()].into_iter())
        .max()
        .unwrap_or(6);
    let _ = writeln!(
        out,
        "{:label_w$}  {:>6}  {:>6}  {:>6}  {:>6}",
        "corpus", "LD", "LS", "TTR", "MSTTR"
    );
    for (label, r) in rows {
        let flag = if r.msttr_fallback { "*" } else { " " };
        let _ = writeln!(
            out,
            "{:label_w$}  {:>6.2}  {:>6.2}  {:>6.2}  {:>5.2}{flag}",
            label, r.ld, r.ls, r.ttr, r.msttr
        );
    }
    if rows.iter().any(|(_, r)| r.msttr_fallback) {
        let _ = writeln!(
            out,
            "* fewer tokens than one segment; MSTTR fell back to plain TTR"
        );
    }
    out
}
