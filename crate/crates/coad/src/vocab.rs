//! The shared word-level vocabulary.
//!
//! Layout is fixed: five special tokens, then one naming token per object
//! category, then filler tokens. Filler tokens carry no category mapping.

use crate::error::{CoadError, Result};
use serde::{Deserialize, Serialize};

/// Index of the beginning-of-sequence token.
pub const BOS: usize = 0;
/// Index of the end-of-sequence token.
pub const EOS: usize = 1;
/// Index of the affirmative probe-answer token.
pub const YES: usize = 2;
/// Index of the negative probe-answer token.
pub const NO: usize = 3;
/// Index of the probe-prefix token used by presence questions.
pub const PROBE: usize = 4;

const N_SPECIAL: usize = 5;

const OBJECT_NAMES: &[&str] = &[
    "fork", "knife", "spoon", "cup", "plate", "bowl", "table", "chair", "dog", "cat", "bench",
    "car", "tree", "bird", "book", "phone",
];

const FILLER_NAMES: &[&str] = &[
    "a", "the", "on", "near", "with", "and", "there", "is", "some", "small", "large", "shiny",
    "old", "new", "red", "blue", "green", "wooden", "round", "quiet", "bright", "scene", "shows",
    "beside", "under", "over", "around", "corner", "room", "floor", "wall", "light", "shadow",
    "edge", "top",
];

/// Ordered token list with the partial token -> object-category map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    categories: usize,
}

impl Vocab {
    /// Builds the vocabulary for `categories` object classes plus
    /// `filler_tokens` non-object words.
    pub fn build(categories: usize, filler_tokens: usize) -> Result<Self> {
        if categories == 0 {
            return Err(CoadError::Config(
                "vocabulary needs at least one object category".into(),
            ));
        }
        let mut tokens: Vec<String> = ["<bos>", "<eos>", "<yes>", "<no>", "<probe>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in 0..categories {
            tokens.push(match OBJECT_NAMES.get(c) {
                Some(name) => name.to_string(),
                None => format!("object{c}"),
            });
        }
        for f in 0..filler_tokens {
            tokens.push(match FILLER_NAMES.get(f) {
                Some(name) => name.to_string(),
                None => format!("filler{f}"),
            });
        }
        let vocab = Vocab { tokens, categories };
        vocab.check_unique()?;
        Ok(vocab)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tokens {
            if !seen.insert(t.as_str()) {
                return Err(CoadError::Config(format!("duplicate token name: {t}")));
            }
        }
        Ok(())
    }

    /// Total token count.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of object categories.
    pub fn categories(&self) -> usize {
        self.categories
    }

    /// The unique naming token of category `c`.
    pub fn category_token(&self, c: usize) -> usize {
        debug_assert!(c < self.categories);
        N_SPECIAL + c
    }

    /// The category named by token `tok`, if any; fillers and specials map
    /// to `None`.
    pub fn token_category(&self, tok: usize) -> Option<usize> {
        if (N_SPECIAL..N_SPECIAL + self.categories).contains(&tok) {
            Some(tok - N_SPECIAL)
        } else {
            None
        }
    }

    /// Whether `tok` is a valid index.
    pub fn contains(&self, tok: usize) -> bool {
        tok < self.tokens.len()
    }

    pub fn name(&self, tok: usize) -> &str {
        &self.tokens[tok]
    }

    /// Token index for a name, if present.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == name)
    }

    /// Indices of the filler tokens.
    pub fn filler_range(&self) -> std::ops::Range<usize> {
        N_SPECIAL + self.categories..self.tokens.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_maps_categories_one_to_one() {
        let v = Vocab::build(3, 4).unwrap();
        assert_eq!(v.len(), 5 + 3 + 4);
        for c in 0..3 {
            let tok = v.category_token(c);
            assert_eq!(v.token_category(tok), Some(c));
        }
        // specials and fillers are not object-mapped
        for tok in [BOS, EOS, YES, NO, PROBE] {
            assert_eq!(v.token_category(tok), None);
        }
        for tok in v.filler_range() {
            assert_eq!(v.token_category(tok), None);
        }
    }

    #[test]
    fn names_are_unique_even_past_the_word_lists() {
        let v = Vocab::build(16, 60).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..v.len() {
            assert!(seen.insert(v.name(i).to_string()), "dup {}", v.name(i));
        }
    }

    #[test]
    fn rejects_zero_categories() {
        assert!(Vocab::build(0, 4).is_err());
    }
}
