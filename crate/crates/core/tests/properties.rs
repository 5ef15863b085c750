//! Property tests for the cross-module invariants.

use proptest::prelude::*;

use defgen_core::corpus::{definition_witness, DefinitionEntry, filter_by_defining_vocabulary};
use defgen_core::graph::Graph;
use defgen_core::lexcomplexity::{tokenize_for_metrics, ttr};
use defgen_core::tokenizer::Vocabulary;
use defgen_core::wordlist::WordList;

fn small_vocab() -> Vocabulary {
    Vocabulary::train_bpe(
        "the cat sat on the mat 總數大幅增加 größe émigré tabs\tand\nnewlines",
        300,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Byte-level base symbols make every UTF-8 string survive the roundtrip.
    #[test]
    fn tokenizer_roundtrip_arbitrary_strings(text in ".*") {
        let vocab = small_vocab();
        let ids = vocab.encode(&text);
        prop_assert_eq!(vocab.decode(&ids).unwrap(), text);
        prop_assert!(ids.iter().all(|&id| !Vocabulary::is_special(id)));
    }

    /// Softmax rows sum to one for any finite input.
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        scale in 0.001f64..100.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let mut g = Graph::new();
        let x = g.constant(data, vec![rows, cols]).unwrap();
        let y = g.softmax(x, 1).unwrap();
        for r in 0..rows {
            let sum: f64 = g.value(y)[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    /// Kept entries pass the allow-or-function check on every alphabetic
    /// token; dropped entries carry a genuine witness.
    #[test]
    fn filter_soundness_and_witness_completeness(seed in any::<u64>(), n in 1usize..40) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let allow = WordList::new("allow", ["cat", "dog", "animal", "small"]);
        let fn_words = WordList::new("fn", ["a", "the", "that"]);
        let pool = ["a", "the", "cat", "dog", "animal", "small", "feline", "obscure", "3,000", "-"];
        let entries: Vec<DefinitionEntry> = (0..n)
            .map(|i| {
                let len = rng.gen_range(1..6);
                let def: Vec<&str> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
                DefinitionEntry::new(
                    format!("w{i}"),
                    format!("use w{i} here"),
                    def.join(" "),
                    "en",
                ).unwrap()
            })
            .collect();
        let (kept, dropped) = filter_by_defining_vocabulary(&entries, &allow, &fn_words).unwrap();
        prop_assert_eq!(kept.len() + dropped.len(), entries.len());
        for e in &kept {
            prop_assert!(definition_witness(&e.definition, &allow, &fn_words).is_none());
        }
        for d in &dropped {
            // the reported witness itself fails the check
            prop_assert!(!allow.contains(&d.witness) && !fn_words.contains(&d.witness));
            // and it occurs in the definition (case-folded)
            prop_assert!(d.entry.definition.to_lowercase().contains(&d.witness));
        }
    }

    /// TTR never rises when a duplicate token is appended.
    #[test]
    fn ttr_never_increases_with_duplicates(words in proptest::collection::vec("[a-d]{1,2}", 1..30)) {
        let tokens: Vec<String> = words;
        let before = ttr(&tokens).unwrap();
        let mut longer = tokens.clone();
        longer.push(tokens[0].clone());
        prop_assert!(ttr(&longer).unwrap() <= before + 1e-15);
    }

    /// Metric tokenization is itself idempotent under re-joining.
    #[test]
    fn metric_tokens_are_already_clean(text in "[ a-zA-Z.,!?0-9]{0,60}") {
        let tokens = tokenize_for_metrics(&text);
        let rejoined = tokens.join(" ");
        prop_assert_eq!(tokenize_for_metrics(&rejoined), tokens);
    }
}
