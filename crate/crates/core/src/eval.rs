//! Perplexity and corpus BLEU.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::DefinitionEntry;
use crate::decoding::log_softmax;
use crate::error::{Error, Result};
use crate::model::{build_input, teacher_forcing_pair, EncodedInput, ForwardPass, Model};
use crate::tokenizer::Vocabulary;

/// One entry encoded for the model: source side plus definition token ids.
#[derive(Debug, Clone)]
pub struct PreparedEntry {
    pub entry: DefinitionEntry,
    pub input: EncodedInput,
    pub definition_ids: Vec<u32>,
}

pub fn prepare_entries(
    entries: &[DefinitionEntry],
    vocab: &Vocabulary,
    max_positions: usize,
) -> Result<Vec<PreparedEntry>> {
    entries
        .iter()
        .map(|entry| {
            Ok(PreparedEntry {
                input: build_input(&entry.word, &entry.example, vocab, max_positions)?,
                definition_ids: vocab.encode(&entry.definition),
                entry: entry.clone(),
            })
        })
        .collect()
}

/// Teacher-forced negative log-likelihood of the gold definition (EOS
/// included), as `(total_nll, token_count)`.
pub fn definition_nll(model: &Model, prepared: &PreparedEntry) -> Result<(f64, usize)> {
    let mut fp = ForwardPass::inference(model);
    let memory = fp.encode_input(&prepared.input)?;
    let (prefix, targets) =
        teacher_forcing_pair(&prepared.definition_ids, model.config.max_positions);
    let logits = fp.decode_logits(memory, &prefix)?;
    let vocab = model.config.vocab_size;
    let values = fp.graph.value(logits);
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        if target == crate::tokenizer::PAD_ID {
            continue;
        }
        let row = &values[t * vocab..(t + 1) * vocab];
        let lp = log_softmax(row);
        total -= lp[target as usize];
    }
    Ok((total, targets.len()))
}

pub fn perplexity_from_nll(total_nll: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::contract("perplexity over zero tokens"));
    }
    Ok((total_nll / token_count as f64).exp())
}

/// Corpus perplexity: `exp(sum NLL / sum tokens)` over gold definitions.
pub fn perplexity(model: &Model, prepared: &[PreparedEntry]) -> Result<f64> {
    if prepared.is_empty() {
        return Err(Error::contract("perplexity of an empty entry set"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in prepared {
        let (nll, n) = definition_nll(model, p)?;
        total += nll;
        count += n;
    }
    perplexity_from_nll(total, count)
}

// ── BLEU ────────────────────────────────────────────────────────────────

pub const BLEU_MAX_N: usize = 4;

/// Corpus BLEU over case-folded whitespace tokens, single reference per
/// hypothesis: modified n-gram precisions for n=1..4 with add-one smoothing
/// on n >= 2 when the clipped match count is zero, geometric mean, brevity
/// penalty `exp(1 - r/c)` when c < r, scaled to 0-100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub bleu: f64,
    pub precisions: [f64; BLEU_MAX_N],
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
}

fn bleu_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "corpus_bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::contract("corpus_bleu over an empty corpus"));
    }
    let hyp_tok: Vec<Vec<String>> = hypotheses.iter().map(|h| bleu_tokens(h)).collect();
    let ref_tok: Vec<Vec<String>> = references.iter().map(|r| bleu_tokens(r)).collect();

    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    for (h, r) in hyp_tok.iter().zip(&ref_tok) {
        for n in 1..=BLEU_MAX_N {
            let h_counts = ngram_counts(h, n);
            let r_counts = ngram_counts(r, n);
            for (gram, &count) in &h_counts {
                totals[n - 1] += count;
                let clip = r_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
        }
    }

    let mut precisions = [0.0; BLEU_MAX_N];
    let mut log_sum = 0.0;
    let mut zero_unigram = false;
    for n in 1..=BLEU_MAX_N {
        let (m, d) = (matches[n - 1], totals[n - 1]);
        let p = if m == 0 && n >= 2 {
            (m as f64 + 1.0) / (d as f64 + 1.0)
        } else if d == 0 {
            0.0
        } else {
            m as f64 / d as f64
        };
        precisions[n - 1] = p;
        if p <= 0.0 {
            zero_unigram = true;
        } else {
            log_sum += p.ln() / BLEU_MAX_N as f64;
        }
    }

    let c: usize = hyp_tok.iter().map(Vec::len).sum();
    let r: usize = ref_tok.iter().map(Vec::len).sum();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let bleu = if zero_unigram || c == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * log_sum.exp()
    };
    Ok(BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        hyp_tokens: c,
        ref_tokens: r,
    })
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ppl: f64,
    #[serde(flatten)]
    pub bleu: BleuScore,
}

impl EvalReport {
    pub fn new(ppl: f64, bleu: BleuScore) -> Result<Self> {
        if ppl < 1.0 || !(0.0..=100.0).contains(&bleu.bleu) {
            return Err(Error::numeric(format!(
                "evaluation out of range: ppl {ppl}, bleu {}",
                bleu.bleu
            )));
        }
        Ok(EvalReport { ppl, bleu })
    }
}

/// Aligned PPL/BLEU table; with two labelled reports the second row carries
/// the BLEU improvement over the first.
pub fn eval_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(["model".len()].into_iter())
        .max()
        .unwrap_or(5);
    let _ = writeln!(
        out,
        "{:label_w$}  {:>10}  {:>8}  {:>8}",
        "model", "PPL", "BLEU", "ΔBLEU"
    );
    let mut base_bleu: Option<f64> = None;
    for (label, report) in rows {
        let delta = match base_bleu {
            None => {
                base_bleu = Some(report.bleu.bleu);
                String::new()
            }
            Some(b) => format!("{:+.2}", report.bleu.bleu - b),
        };
        let _ = writeln!(
            out,
            "{:label_w$}  {:>10.4}  {:>8.2}  {:>8}",
            label, report.ppl, report.bleu.bleu, delta
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppl_one_when_every_token_has_probability_one() {
        assert!((perplexity_from_nll(0.0, 5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ppl_matches_hand_arithmetic() {
        // token probabilities 0.5 and 0.25
        let nll = -(0.5f64.ln() + 0.25f64.ln());
        let ppl = perplexity_from_nll(nll, 2).unwrap();
        assert!((ppl - 2.0 * 2.0f64.sqrt()).abs() < 1e-12, "{ppl}");
    }

    #[test]
    fn ppl_zero_tokens_is_contract_error() {
        assert!(perplexity_from_nll(1.0, 0).is_err());
        assert!(perplexity(&test_model(100), &[]).is_err());
    }

    fn test_model(vocab_size: usize) -> Model {
        let cfg = crate::model::ModelConfig::grad_check(vocab_size);
        Model::new(cfg, 5).unwrap()
    }

    #[test]
    fn uniform_model_ppl_equals_vocab_size() {
        // zero-initialized output head makes every next-token distribution
        // uniform over the 100-id vocabulary
        let model = test_model(100);
        let prepared = vec![PreparedEntry {
            entry: DefinitionEntry::new("w", "w here", "def", "en").unwrap(),
            input: EncodedInput {
                token_ids: vec![2, 10, 4, 11, 12, 3],
                type_ids: vec![0, 0, 0, 1, 1, 1],
                positions: (0..6).collect(),
            },
            definition_ids: vec![20, 21, 22],
        }];
        let ppl = perplexity(&model, &prepared).unwrap();
        assert!((ppl - 100.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn ppl_is_exp_of_graph_cross_entropy() {
        let model = test_model(64);
        let prepared = PreparedEntry {
            entry: DefinitionEntry::new("w", "w here", "def", "en").unwrap(),
            input: EncodedInput {
                token_ids: vec![2, 10, 4, 11, 12, 3],
                type_ids: vec![0, 0, 0, 1, 1, 1],
                positions: (0..6).collect(),
            },
            definition_ids: vec![20, 21, 22],
        };
        let (nll, count) = definition_nll(&model, &prepared).unwrap();
        let route_a = perplexity_from_nll(nll, count).unwrap();

        // independent route through the graph loss node
        let mut fp = ForwardPass::inference(&model);
        let loss = fp
            .sequence_loss(&prepared.input, &prepared.definition_ids)
            .unwrap();
        let route_b = fp.graph.scalar_value(loss).exp();
        assert!((route_a - route_b).abs() < 1e-9);
    }

    #[test]
    fn bleu_identity_is_100() {
        let text = vec!["a small animal that people keep".to_string()];
        let score = corpus_bleu(&text, &text).unwrap();
        assert!((score.bleu - 100.0).abs() < 1e-9);
        assert_eq!(score.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_zero_overlap_is_0() {
        let hyp = vec!["aa bb cc dd".to_string()];
        let reference = vec!["ee ff gg hh".to_string()];
        assert_eq!(corpus_bleu(&hyp, &reference).unwrap().bleu, 0.0);
    }

    #[test]
    fn bleu_matches_hand_computed_clipped_counts() {
        // hyp "the the cat" vs ref "the cat sat":
        //   p1 = (min(2,1) + min(1,1)) / 3 = 2/3
        //   p2 = 1/2 ((the,cat) matches)
        //   p3 = 0 -> smoothed (0+1)/(1+1) = 1/2
        //   p4: no hypothesis 4-grams -> smoothed (0+1)/(0+1) = 1
        //   BP = 1 (c == r == 3)
        //   BLEU = 100 * (2/3 * 1/2 * 1/2 * 1)^(1/4)
        let hyp = vec!["the the cat".to_string()];
        let reference = vec!["the cat sat".to_string()];
        let score = corpus_bleu(&hyp, &reference).unwrap();
        let expect = 100.0 * (2.0f64 / 3.0 * 0.5 * 0.5 * 1.0).powf(0.25);
        assert!((score.bleu - expect).abs() < 1e-6, "{} vs {expect}", score.bleu);
        assert!((score.precisions[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((score.precisions[1] - 0.5).abs() < 1e-12);
        assert!((score.precisions[2] - 0.5).abs() < 1e-12);
        assert!((score.precisions[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty_penalizes_short_output() {
        let hyp = vec!["the cat".to_string()];
        let reference = vec!["the cat sat on a mat".to_string()];
        let score = corpus_bleu(&hyp, &reference).unwrap();
        assert!((score.brevity_penalty - (1.0f64 - 6.0 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_is_case_insensitive() {
        let hyp = vec!["The CAT sat down here".to_string()];
        let reference = vec!["the cat sat down here".to_string()];
        assert!((corpus_bleu(&hyp, &reference).unwrap().bleu - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_is_permutation_invariant_over_pairs() {
        let hyps = vec![
            "a small cat".to_string(),
            "the dog runs fast".to_string(),
            "water falls down".to_string(),
        ];
        let refs = vec![
            "a small animal".to_string(),
            "the dog runs quickly".to_string(),
            "water flows down".to_string(),
        ];
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let perm = [2usize, 0, 1];
        let hyps_p: Vec<String> = perm.iter().map(|&i| hyps[i].clone()).collect();
        let refs_p: Vec<String> = perm.iter().map(|&i| refs[i].clone()).collect();
        let b = corpus_bleu(&hyps_p, &refs_p).unwrap();
        assert!((a.bleu - b.bleu).abs() < 1e-12);
    }

    #[test]
    fn appending_matching_four_gram_raises_score_from_zero() {
        let mut hyps = vec!["aa bb cc dd".to_string()];
        let mut refs = vec!["ee ff gg hh".to_string()];
        let before = corpus_bleu(&hyps, &refs).unwrap().bleu;
        hyps.push("one two three four".to_string());
        refs.push("one two three four".to_string());
        let after = corpus_bleu(&hyps, &refs).unwrap().bleu;
        assert_eq!(before, 0.0);
        assert!(after > before);
    }

    #[test]
    fn bleu_length_mismatch_is_contract_error() {
        let err = corpus_bleu(&["a".to_string()], &[]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn eval_table_includes_delta_for_second_row() {
        let bleu = corpus_bleu(
            &["the cat sat down".to_string()],
            &["the cat sat down".to_string()],
        )
        .unwrap();
        let a = EvalReport::new(12.5, bleu.clone()).unwrap();
        let b = EvalReport::new(10.0, bleu).unwrap();
        let table = eval_table(&[("stage1".into(), a), ("stage2".into(), b)]);
        assert!(table.contains("ΔBLEU"));
        assert!(table.contains("+0.00"));
    }
}
