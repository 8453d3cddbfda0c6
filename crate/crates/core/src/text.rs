//! Text normalization helpers shared by ingestion, filtering and statistics.

use std::borrow::Cow;

use unicode_normalization::UnicodeNormalization;

pub const STRONG_OPEN: &str = "<strong>";
pub const STRONG_CLOSE: &str = "</strong>";

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Collapses every run of Unicode whitespace to one ASCII space and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercase, drop punctuation and symbols, collapse whitespace.
pub fn normalize_chapter_key(title: &str) -> String {
    let lowered: String = nfc(title)
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    collapse_whitespace(&lowered)
}

/// Removes the retained `<strong>` markup, leaving the escaped plain text.
pub fn strip_strong(text: &str) -> Cow<'_, str> {
    if text.contains('<') {
        Cow::Owned(text.replace(STRONG_OPEN, "").replace(STRONG_CLOSE, ""))
    } else {
        Cow::Borrowed(text)
    }
}

/// Number of maximal non-whitespace runs after NFC normalization, ignoring `<strong>` tags.
pub fn token_count(text: &str) -> usize {
    nfc(&strip_strong(text)).split_whitespace().count()
}

/// Number of Unicode scalar values after NFC normalization, ignoring `<strong>` tags.
pub fn char_count(text: &str) -> usize {
    nfc(&strip_strong(text)).chars().count()
}

/// Tag names (lowercased) that appear in a segment text. Text escapes literal
/// angle brackets, so every `<` starts a tag.
pub fn tag_names(text: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let after = &rest[start + 1..];
        let after = after.strip_prefix('/').unwrap_or(after);
        let name: String = after
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        names.push(name.to_ascii_lowercase());
        rest = &rest[start + 1..];
    }
    names
}

/// Replaces tabs, carriage returns and newlines with spaces, then collapses runs.
pub fn sanitize_cell(text: &str) -> String {
    if text.contains(['\t', '\n', '\r']) {
        let replaced: String = text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        collapse_whitespace(&replaced)
    } else {
        text.to_string()
    }
}
