//! Recovering the `{reasoning, context, answer}` object from raw model output
//! and normalizing answers per target kind.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::registry::{AnswerKind, ExtractionTarget};

pub const REQUIRED_KEYS: [&str; 3] = ["reasoning", "context", "answer"];

pub const BINARY_LABELS: [&str; 3] = ["yes", "no", "none"];

/// Version of the binary synonym table below. Bump on any change.
pub const BINARY_SYNONYMS_VERSION: u32 = 1;

const BINARY_SYNONYMS: &[(&str, &str)] = &[
    ("yes", "yes"),
    ("y", "yes"),
    ("true", "yes"),
    ("no", "no"),
    ("n", "no"),
    ("false", "no"),
    ("none", "none"),
    ("n/a", "none"),
    ("not applicable", "none"),
    ("unknown", "none"),
];

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '\u{2026}'];

/// Repair rungs, in the order they are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    None,
    FenceStripped,
    TrailingTextDropped,
    BraceBalanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("JSON object is missing keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("malformed JSON beyond repair: {0}")]
    UnrecoverableJson(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::NoJsonFound => "NoJsonFound",
            ParseError::MissingKeys(_) => "MissingKeys",
            ParseError::UnrecoverableJson(_) => "UnrecoverableJson",
        }
    }
}

/// The three answer fields as returned by the model, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExtraction {
    pub reasoning: String,
    pub context: String,
    pub answer: String,
    /// Terminal repair state: the last rung that fired.
    pub repair_applied: Repair,
    /// Every rung that fired, in order.
    pub repairs: Vec<Repair>,
}

/// A validated extraction with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedExtraction {
    pub reasoning: String,
    pub context: String,
    pub answer: String,
    pub normalized_answer: String,
    pub non_canonical: bool,
    pub answer_word_count: usize,
    pub repair_applied: Repair,
    pub target_id: String,
    pub doc_id: String,
    pub model: String,
    pub shot_mode: usize,
}

impl ParsedExtraction {
    pub fn new(raw: RawExtraction, target: &ExtractionTarget, doc_id: &str, model: &str, shot_mode: usize) -> Self {
        let vocab = target.vocabulary();
        let norm = normalize_answer(&raw.answer, target.kind, vocab.as_deref());
        ParsedExtraction {
            answer_word_count: raw.answer.split_whitespace().count(),
            reasoning: raw.reasoning,
            context: raw.context,
            answer: raw.answer,
            normalized_answer: norm.text,
            non_canonical: !norm.canonical,
            repair_applied: raw.repair_applied,
            target_id: target.target_id.clone(),
            doc_id: doc_id.to_string(),
            model: model.to_string(),
            shot_mode,
        }
    }
}

/// Locates and validates the answer object in raw model output.
///
/// Repairs are tried in a fixed order: strip a Markdown code fence, drop
/// prose outside the outermost braces, then close a single missing final
/// brace. Anything else is reported as an error.
pub fn parse_model_output(raw: &str) -> Result<RawExtraction, ParseError> {
    let mut text = raw.trim();
    if text.is_empty() {
        return Err(ParseError::NoJsonFound);
    }
    let mut repairs = Vec::new();

    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(text) {
        return finish(&map, repairs);
    }

    if let Some(inner) = fenced_block(text) {
        repairs.push(Repair::FenceStripped);
        text = inner.trim();
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(text) {
            return finish(&map, repairs);
        }
    }

    let mut first_missing: Option<ParseError> = None;
    let mut first_malformed: Option<String> = None;
    let mut found_any = false;
    for candidate in scan_objects(text) {
        found_any = true;
        let (slice, balanced) = match candidate.end {
            Some(end) => (text[candidate.start..end].to_string(), false),
            None if candidate.open_depth == 1 && !candidate.in_string => {
                (format!("{}}}", text[candidate.start..].trim_end()), true)
            }
            None => {
                first_malformed.get_or_insert_with(|| "unterminated object".to_string());
                continue;
            }
        };
        match serde_json::from_str::<Value>(&slice) {
            Ok(Value::Object(map)) => {
                let missing = missing_keys(&map);
                if missing.is_empty() {
                    let covers_all = candidate.start == 0 && candidate.end.is_none_or(|e| e == text.len());
                    if !covers_all {
                        repairs.push(Repair::TrailingTextDropped);
                    }
                    if balanced {
                        repairs.push(Repair::BraceBalanced);
                    }
                    return finish(&map, repairs);
                }
                first_missing.get_or_insert(ParseError::MissingKeys(missing));
            }
            Ok(_) => {}
            Err(e) => {
                first_malformed.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if let Some(missing) = first_missing {
        return Err(missing);
    }
    match (found_any, first_malformed) {
        (_, Some(msg)) => Err(ParseError::UnrecoverableJson(msg)),
        (true, None) => Err(ParseError::UnrecoverableJson("no object candidates parsed".into())),
        (false, None) => Err(ParseError::NoJsonFound),
    }
}

fn missing_keys(map: &Map<String, Value>) -> Vec<String> {
    REQUIRED_KEYS
        .iter()
        .filter(|k| !map.contains_key(**k))
        .map(|k| k.to_string())
        .collect()
}

fn finish(map: &Map<String, Value>, repairs: Vec<Repair>) -> Result<RawExtraction, ParseError> {
    let missing = missing_keys(map);
    if !missing.is_empty() {
        return Err(ParseError::MissingKeys(missing));
    }
    Ok(RawExtraction {
        reasoning: field_text(&map["reasoning"]),
        context: field_text(&map["context"]),
        answer: field_text(&map["answer"]),
        repair_applied: repairs.last().copied().unwrap_or(Repair::None),
        repairs,
    })
}

fn field_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(items) if items.iter().all(Value::is_string) => items
            .iter()
            .filter_map(Value::as_str)
            .collect::<Vec<_>>()
            .join("; "),
        other => other.to_string(),
    }
}

/// Content of the first Markdown code fence. An unclosed fence runs to the
/// end of the text.
fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let info = &after[..body_start];
    // An info string is a single word such as `json`; anything else means
    // the object starts on the fence line.
    let body = if info.trim().chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        &after[body_start..]
    } else {
        after
    };
    Some(match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    })
}

struct ObjectCandidate {
    start: usize,
    /// Byte offset one past the closing brace, or `None` if unterminated.
    end: Option<usize>,
    open_depth: usize,
    in_string: bool,
}

/// Top-level brace-delimited regions. String state is tracked only inside
/// an object since surrounding prose may contain stray quotes.
fn scan_objects(text: &str) -> Vec<ObjectCandidate> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let start = i;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        while i < bytes.len() {
            let b = bytes[i];
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
            } else {
                match b {
                    b'"' => in_string = true,
                    b'{' | b'[' => depth += 1,
                    b'}' | b']' => {
                        depth = depth.saturating_sub(1);
                        if depth == 0 {
                            end = Some(i + 1);
                            i += 1;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            i += 1;
        }
        let unterminated = end.is_none();
        out.push(ObjectCandidate {
            start,
            end,
            open_depth: depth,
            in_string,
        });
        if unterminated {
            break;
        }
    }
    out
}

/// Result of answer normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub text: String,
    /// False when the answer could not be mapped into the kind's vocabulary.
    pub canonical: bool,
}

/// Base normalization shared by all kinds: NFKC, lowercase, collapsed
/// whitespace, terminal punctuation stripped.
pub fn normalize_surface(answer: &str) -> String {
    let lowered = answer.nfkc().collect::<String>().to_lowercase();
    let mut s = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = s.trim_end_matches(TERMINAL_PUNCTUATION).trim_end();
        if stripped.len() == s.len() {
            break;
        }
        s = stripped.to_string();
    }
    s
}

/// Kind-aware answer normalization. Never fails; answers that do not map
/// into the vocabulary pass through with `canonical = false`.
pub fn normalize_answer(answer: &str, kind: AnswerKind, vocabulary: Option<&[String]>) -> NormalizedAnswer {
    let surface = normalize_surface(answer);
    match kind {
        AnswerKind::Binary => match BINARY_SYNONYMS.iter().find(|(k, _)| *k == surface) {
            Some((_, label)) => NormalizedAnswer { text: label.to_string(), canonical: true },
            None => NormalizedAnswer { text: surface, canonical: false },
        },
        AnswerKind::Categorical => {
            let hit = vocabulary
                .unwrap_or_default()
                .iter()
                .map(|label| normalize_surface(label))
                .find(|label| *label == surface);
            match hit {
                Some(label) => NormalizedAnswer { text: label, canonical: true },
                None => NormalizedAnswer { text: surface, canonical: false },
            }
        }
        AnswerKind::FreeText => NormalizedAnswer { text: surface, canonical: true },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed() {
        let r = parse_model_output(r#"{"reasoning":"r","context":"c","answer":"a"}"#).unwrap();
        assert_eq!((r.reasoning.as_str(), r.context.as_str(), r.answer.as_str()), ("r", "c", "a"));
        assert_eq!(r.repair_applied, Repair::None);
    }

    #[test]
    fn fenced_with_prose() {
        let raw = "Here is the result:\n```json\n{\"reasoning\": \"because\", \"context\": \"the text\", \"answer\": \"yes\"}\n```\nHope this helps!";
        let r = parse_model_output(raw).unwrap();
        assert_eq!(r.answer, "yes");
        assert_eq!(r.context, "the text");
        assert_eq!(r.repair_applied, Repair::FenceStripped);
    }

    #[test]
    fn prose_without_fence() {
        let raw = "Sure! {\"reasoning\":\"r\",\"context\":\"c\",\"answer\":\"a\"} Let me know.";
        let r = parse_model_output(raw).unwrap();
        assert_eq!(r.repair_applied, Repair::TrailingTextDropped);
        assert_eq!(r.repairs, vec![Repair::TrailingTextDropped]);
    }

    #[test]
    fn missing_brace_balanced() {
        let r = parse_model_output(r#"{"reasoning":"r","context":"c","answer":"a""#).unwrap();
        assert_eq!(r.repair_applied, Repair::BraceBalanced);
        let err = parse_model_output(r#"{"reasoning":"r","context":{"x":"c","answer":"a""#).unwrap_err();
        assert!(matches!(err, ParseError::UnrecoverableJson(_)));
    }

    #[test]
    fn missing_keys() {
        let err = parse_model_output(r#"{"reasoning":"r","answer":"a"}"#).unwrap_err();
        assert_eq!(err, ParseError::MissingKeys(vec!["context".into()]));
    }

    #[test]
    fn first_complete_object_wins() {
        let raw = r#"{"note":1} then {"reasoning":"r","context":"c","answer":"a"}"#;
        assert_eq!(parse_model_output(raw).unwrap().answer, "a");
    }

    #[test]
    fn no_json() {
        assert_eq!(parse_model_output("I cannot answer."), Err(ParseError::NoJsonFound));
        assert_eq!(parse_model_output("   "), Err(ParseError::NoJsonFound));
    }

    #[test]
    fn single_quotes_not_repaired() {
        let err = parse_model_output("{'reasoning':'r','context':'c','answer':'a'}").unwrap_err();
        assert!(matches!(err, ParseError::UnrecoverableJson(_)));
    }

    #[test]
    fn non_string_values() {
        let r = parse_model_output(r#"{"reasoning":null,"context":["a","b"],"answer":true}"#).unwrap();
        assert_eq!((r.reasoning.as_str(), r.context.as_str(), r.answer.as_str()), ("", "a; b", "true"));
    }

    #[test]
    fn binary_mapping() {
        assert_eq!(normalize_answer("Yes.", AnswerKind::Binary, None).text, "yes");
        assert_eq!(normalize_answer("  FALSE ", AnswerKind::Binary, None).text, "no");
        assert_eq!(normalize_answer("N/A", AnswerKind::Binary, None).text, "none");
        assert_eq!(normalize_answer("Not applicable!", AnswerKind::Binary, None).text, "none");
        let maybe = normalize_answer("maybe", AnswerKind::Binary, None);
        assert_eq!(maybe, NormalizedAnswer { text: "maybe".into(), canonical: false });
    }

    #[test]
    fn categorical_casefold() {
        let vocab = vec!["process mining".to_string(), "bpmn".to_string()];
        let n = normalize_answer("Process Mining", AnswerKind::Categorical, Some(&vocab));
        assert_eq!(n, NormalizedAnswer { text: "process mining".into(), canonical: true });
        let n = normalize_answer("Simulation", AnswerKind::Categorical, Some(&vocab));
        assert!(!n.canonical);
    }

    #[test]
    fn free_text_only_normalizes() {
        let n = normalize_answer("How to decide which processes need analysis?", AnswerKind::FreeText, None);
        assert_eq!(n.text, "how to decide which processes need analysis");
        assert!(n.canonical);
    }

    proptest::proptest! {
        #[test]
        fn normalization_idempotent(s in "\\PC{0,30}", k in 0usize..3) {
            let kind = [AnswerKind::Binary, AnswerKind::Categorical, AnswerKind::FreeText][k];
            let vocab = vec!["Process Mining".to_string(), "BPMN.".to_string()];
            let once = normalize_answer(&s, kind, Some(&vocab));
            let twice = normalize_answer(&once.text, kind, Some(&vocab));
            proptest::prop_assert_eq!(once, twice);
        }

        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let _ = parse_model_output(&s);
        }

        #[test]
        fn recovers_fields_verbatim(
            r in "[^\\u{0}-\\u{1f}]{0,30}",
            c in "[^\\u{0}-\\u{1f}]{0,30}",
            a in "[^\\u{0}-\\u{1f}]{0,30}",
            prefix in "[a-zA-Z :!'\\n]{0,20}",
            fence in proptest::bool::ANY,
        ) {
            let obj = serde_json::json!({"reasoning": r, "context": c, "answer": a}).to_string();
            let raw = if fence { format!("{prefix}\n```json\n{obj}\n```\nthanks") } else { format!("{prefix} {obj}") };
            let got = parse_model_output(&raw).unwrap();
            proptest::prop_assert_eq!(got.reasoning, r);
            proptest::prop_assert_eq!(got.context, c);
            proptest::prop_assert_eq!(got.answer, a);
        }
    }
}
