//! Case-folded word sets loaded from one-word-per-line files.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Bundled English function-word stoplist (replaceable by flag).
pub const BUILTIN_FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");

/// A named, case-folded word set. Duplicates collapse on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    name: String,
    words: BTreeSet<String>,
}

impl WordList {
    pub fn new(name: impl Into<String>, words: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        WordList {
            name: name.into(),
            words: words
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
        }
    }

    /// Parse `# `-commented one-word-per-line text.
    pub fn from_text(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut words = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.split_whitespace().count() != 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected one word per line, got {line:?}"),
                });
            }
            words.insert(line.to_lowercase());
        }
        Ok(WordList {
            name: name.into(),
            words,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "wordlist".to_string());
        Self::from_text(name, &std::fs::read_to_string(path)?)
    }

    pub fn builtin_function_words() -> Self {
        Self::from_text("function-words", BUILTIN_FUNCTION_WORDS)
            .expect("bundled list is well-formed")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Case-folded membership test.
    pub fn contains(&self, word: &str) -> bool {
        if self.words.contains(word) {
            return true;
        }
        self.words.contains(&word.to_lowercase())
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_collapses_duplicates() {
        let list = WordList::new("t", ["Cat", "cat", "CAT", "dog"]);
        assert_eq!(list.len(), 2);
        assert!(list.contains("cAt"));
    }

    #[test]
    fn from_text_skips_comments_and_blanks() {
        let list = WordList::from_text("t", "# header\n\ncat\n dog \n").unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.contains("dog"));
    }

    #[test]
    fn from_text_rejects_multiword_lines() {
        assert!(matches!(
            WordList::from_text("t", "two words\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn builtin_list_has_roughly_150_entries() {
        let list = WordList::builtin_function_words();
        assert!(list.len() >= 140, "got {}", list.len());
        assert!(list.contains("the"));
        assert!(list.contains("of"));
    }
}
