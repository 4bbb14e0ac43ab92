//! Deterministic approximate token counting.
//!
//! Token counts steer chunk budgets and text splitting. The default rule is
//! intentionally simple — maximal alphanumeric runs — and makes no attempt
//! to match any provider's byte-pair encoder; recorded token counts from
//! external runs are replayed verbatim, never recomputed with this rule.

use serde::{Deserialize, Serialize};

/// Name of the default counting rule.
pub const DEFAULT_TOKENIZER: &str = "ws-punct-v1";

/// A named, deterministic token counting rule.
///
/// Counting is pure and platform-independent: the same text always yields
/// the same count. The rule satisfies
/// `count(a ⧺ b) <= count(a) + count(b) + 1` — concatenation can merge the
/// boundary tokens into one but never invents more.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    /// Rule identifier, recorded in index manifests.
    pub name: String,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec { name: DEFAULT_TOKENIZER.to_string() }
    }
}

impl TokenizerSpec {
    /// Number of tokens in `text` under this rule.
    pub fn count(&self, text: &str) -> usize {
        tokens(text).count()
    }
}

/// Iterator over the maximal alphanumeric runs of `text`.
///
/// Everything that is not alphanumeric (whitespace, punctuation, symbols)
/// separates tokens and is itself never a token.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_alphanumeric_runs() {
        let t = TokenizerSpec::default();
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("   \n\t"), 0);
        // The ordinal indicator "º" is a letter, so "1º" is a single token.
        assert_eq!(t.count("Art. 1º"), 2);
    }

    #[test]
    fn portuguese_text_tokens() {
        let t = TokenizerSpec::default();
        // Accented letters are alphanumeric and stay inside one token;
        // "§" is a symbol and separates.
        assert_eq!(t.count("solução pacífica dos conflitos;"), 4);
        assert_eq!(t.count("§ 1º"), 1);
    }

    #[test]
    fn concat_subadditivity() {
        let t = TokenizerSpec::default();
        let cases = [("abc", "def"), ("a b", "c d"), ("x,", ",y"), ("", "q")];
        for (a, b) in cases {
            let joined = format!("{a}{b}");
            assert!(t.count(&joined) <= t.count(a) + t.count(b) + 1);
        }
    }
}
