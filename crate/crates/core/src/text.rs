//! Normative tokenizer and the stop-word list used for aspect decoding.
//!
//! Tokens are produced by splitting on whitespace and then detaching any
//! leading or trailing punctuation characters as single-character tokens.
//! Punctuation inside a word (`don't`, `e-mail`) stays attached.

use std::collections::HashSet;
use std::sync::OnceLock;

/// Version tag of the shipped stop-word list. Part of the metric config hash.
pub const STOPWORDS_VERSION: &str = "en-v1";

const STOPWORDS_RAW: &str = include_str!("../data/stopwords_en_v1.txt");

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())
}

/// Split `text` into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Tokenize after lower-casing; the metric suite compares these.
pub fn tokenize_folded(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase())
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_RAW
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token.to_lowercase().as_str())
}

/// True for tokens made only of punctuation or symbols (`"`, `...`, `!`).
pub fn is_special(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}
