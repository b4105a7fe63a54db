//! Text normalization shared by ingestion, answer normalization, metrics and
//! alignment.
//!
//! All character offsets produced by this crate count Unicode scalar values
//! (Rust `char`s) into the normalized text, never bytes.

use unicode_normalization::UnicodeNormalization;

/// Normalizes document or context text.
///
/// Applies NFKC, converts CRLF and lone CR to LF, collapses runs of
/// horizontal whitespace to a single space, strips spaces at line edges and
/// trims the whole text. Line breaks are preserved. The function is
/// idempotent.
pub fn normalize_text(input: &str) -> String {
    let nfkc: String = input.nfkc().collect();
    let unified = nfkc.replace("\r\n", "\n").replace('\r', "\n");

    let mut out = String::with_capacity(unified.len());
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut pending_space = false;
        let mut wrote = false;
        for ch in line.chars() {
            if is_horizontal_space(ch) {
                pending_space = wrote;
                continue;
            }
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
            wrote = true;
        }
    }
    out.trim_matches(|c: char| c == '\n' || is_horizontal_space(c))
        .to_string()
}

/// Whitespace other than line feeds.
pub fn is_horizontal_space(ch: char) -> bool {
    ch != '\n' && ch.is_whitespace()
}

/// Tokenizes text for set-based metrics: NFKC, lowercase, punctuation
/// stripped, split on whitespace.
pub fn metric_tokens(input: &str) -> Vec<String> {
    let lowered: String = input.nfkc().collect::<String>().to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if is_punctuation(c) { ' ' } else { c })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// ASCII punctuation plus the Unicode punctuation blocks commonly produced
/// by PDF extraction and LLMs (curly quotes, dashes, ellipsis).
pub fn is_punctuation(ch: char) -> bool {
    ch.is_ascii_punctuation()
        || matches!(
            ch,
            '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00A7}'
                | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
                | '\u{3001}' | '\u{3002}'
        )
}

/// Number of chars in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Returns the substring between two char offsets.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let from = indices.by_ref().nth(start).unwrap_or(s.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(s.len())
    } else {
        from
    };
    &s[from..to]
}
