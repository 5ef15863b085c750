//! Concatenated (word, SEP, example) input encoding with token-type ids.

use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, BOS_ID, EOS_ID, SEP_ID};

/// Token ids, segment type ids, and positions for one encoder input:
/// `[BOS] word [SEP] example [EOS]`. Type ids are 0 through the separator
/// (the word segment owns SEP) and 1 afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub type_ids: Vec<u8>,
    pub positions: Vec<usize>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn sep_index(&self) -> Option<usize> {
        self.token_ids.iter().position(|&id| id == SEP_ID)
    }
}

/// Build the encoder input. The example is truncated to fit `max_positions`;
/// the word never is — a word that cannot fit at all is a contract error.
pub fn build_input(
    word: &str,
    example: &str,
    vocab: &Vocabulary,
    max_positions: usize,
) -> Result<EncodedInput> {
    if word.is_empty() || example.is_empty() {
        return Err(Error::contract("build_input: word and example must be non-empty"));
    }
    let word_ids = vocab.encode(word);
    let example_ids = vocab.encode(example);
    // BOS + word + SEP + example + EOS
    let overhead = 3;
    if word_ids.len() + overhead > max_positions {
        return Err(Error::contract(format!(
            "word occupies {} subword tokens; with BOS/SEP/EOS that exceeds max_positions {}",
            word_ids.len(),
            max_positions
        )));
    }
    let example_budget = max_positions - overhead - word_ids.len();
    let example_ids = &example_ids[..example_ids.len().min(example_budget)];

    let mut token_ids = Vec::with_capacity(word_ids.len() + example_ids.len() + overhead);
    token_ids.push(BOS_ID);
    token_ids.extend_from_slice(&word_ids);
    token_ids.push(SEP_ID);
    let sep_index = token_ids.len() - 1;
    token_ids.extend_from_slice(example_ids);
    token_ids.push(EOS_ID);

    let len = token_ids.len();
    let type_ids = (0..len).map(|i| u8::from(i > sep_index)).collect();
    let positions = (0..len).collect();
    Ok(EncodedInput {
        token_ids,
        type_ids,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Vocabulary, FIRST_MERGE_ID, SEP_ID};

    fn vocab() -> Vocabulary {
        Vocabulary::train_bpe("a cat sat on the mat 總數鳥類總數", 300).unwrap()
    }

    #[test]
    fn sep_appears_once_and_types_flip_once() {
        let v = vocab();
        let inp = build_input("cat", "a cat sat", &v, 64).unwrap();
        let seps = inp.token_ids.iter().filter(|&&id| id == SEP_ID).count();
        assert_eq!(seps, 1);
        let flips = inp
            .type_ids
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        assert_eq!(flips, 1);
        assert_eq!(inp.positions, (0..inp.len()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_type_count_equals_sep_index_plus_one() {
        let v = vocab();
        for (w, ex) in [("cat", "a cat sat"), ("mat", "the mat"), ("總數", "鳥類總數")] {
            let inp = build_input(w, ex, &v, 64).unwrap();
            let zeros = inp.type_ids.iter().filter(|&&t| t == 0).count();
            assert_eq!(zeros, inp.sep_index().unwrap() + 1);
        }
    }

    #[test]
    fn cjk_input_matches_tokenizer_oracle() {
        let v = vocab();
        let inp = build_input("總數", "鳥類總數", &v, 64).unwrap();
        let mut expect = vec![crate::tokenizer::BOS_ID];
        expect.extend(v.encode("總數"));
        expect.push(SEP_ID);
        expect.extend(v.encode("鳥類總數"));
        expect.push(crate::tokenizer::EOS_ID);
        assert_eq!(inp.token_ids, expect);
    }

    #[test]
    fn example_is_truncated_but_word_is_not() {
        let v = Vocabulary::train_bpe("abc", FIRST_MERGE_ID as usize).unwrap();
        // every char is one byte token under a merge-free vocabulary
        let inp = build_input("abc", "abcabcabc", &v, 10).unwrap();
        assert_eq!(inp.len(), 10);
        assert_eq!(*inp.token_ids.last().unwrap(), crate::tokenizer::EOS_ID);
        // word of 8 tokens + overhead 3 > 10
        let err = build_input("abcabcab", "abc", &v, 10).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn empty_fields_are_contract_errors() {
        let v = vocab();
        assert!(build_input("", "a cat", &v, 64).is_err());
        assert!(build_input("cat", "", &v, 64).is_err());
    }
}
