//! Tokenization shared by the sparse ranker and the hashing embedder.

/// Lowercases `text` and splits it on every non-alphanumeric character.
/// Empty fragments are discarded. No stemming, no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses all runs of whitespace (including newlines) to single spaces
/// and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Click('Submit') then SORT_table!"),
            vec!["click", "submit", "then", "sort", "table"]
        );
    }

    #[test]
    fn empty_input_has_no_tokens() {
        assert!(tokenize("  ,;  ").is_empty());
    }

    #[test]
    fn collapse_joins_lines() {
        assert_eq!(collapse_whitespace(" a\n  b\tc \n"), "a b c");
    }
}
