//! Shared text normalization.
//!
//! Every component that needs to agree on token boundaries (toy scorer,
//! word2vec, gazetteer matching) goes through [`tokenize`]. Tokens are
//! lowercased; the bracketed model specials survive as single tokens.

use std::sync::LazyLock;

use regex::Regex;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[(?:CLS|SEP|MASK|UNK|PAD)\]|[\p{L}\p{N}]+(?:'[\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]").unwrap()
});

pub fn is_special(token: &str) -> bool {
    matches!(token, "[CLS]" | "[SEP]" | "[MASK]" | "[UNK]" | "[PAD]")
}

/// Splits on whitespace and punctuation; punctuation characters become
/// their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| {
            let tok = m.as_str();
            if is_special(tok) {
                tok.to_string()
            } else {
                tok.to_lowercase()
            }
        })
        .collect()
}

/// Word tokens only: punctuation and model specials are dropped.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_special(t) && t.chars().next().is_some_and(char::is_alphanumeric))
        .collect()
}

/// Joins model pieces back into text, gluing `##` continuation pieces.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    for piece in pieces {
        let piece = piece.as_ref();
        if let Some(rest) = piece.strip_prefix("##") {
            out.push_str(rest);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
        }
    }
    out
}

/// Case-insensitive whole-token search of `needle` inside `haystack`.
pub fn contains_token_seq(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
