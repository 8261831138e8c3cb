//! Tokenization and surface-string normalization shared by the embedder,
//! entity resolution and the rule-based edge inference.

/// Lowercased alphanumeric words, in order of appearance.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Case-fold, trim and collapse internal whitespace.
///
/// `to_lowercase` is used as the case fold; it agrees with full Unicode
/// case folding for everything except a handful of special cases
/// (e.g. `ß` stays `ß`).
pub fn normalize_surface(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_punctuation_and_lowercases() {
        assert_eq!(tokenize("Open the Fridge, then take-milk!"), vec!["open", "the", "fridge", "then", "take", "milk"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_surface("  The   Coffee\tMUG "), "the coffee mug");
        assert_eq!(normalize_surface("Keys"), "keys");
    }
}
