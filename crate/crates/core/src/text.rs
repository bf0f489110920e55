//! Text normalization shared by name matching, embeddings, and prompts.

/// Case-folded whitespace tokens with punctuation stripped from token edges.
/// Interior punctuation (`Hao-Sheng`, `7-X`) is kept.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// First `max_chars` characters of `text` with whitespace runs collapsed.
pub fn snippet(text: &str, max_chars: usize) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.chars().take(max_chars).collect()
}
