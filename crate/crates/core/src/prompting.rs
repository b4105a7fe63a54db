//! Zero-shot and few-shot prompt assembly around the extraction template.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SourceDocument;
use crate::registry::ExtractionTarget;

/// The extraction instruction in Python `str.format` syntax: `{question}`
/// and `{text}` are substituted, `{{` and `}}` render as literal braces.
pub const EXTRACTION_TEMPLATE: &str = include_str!("../assets/extraction_prompt.txt");

/// Appended to a document text cut to fit the token budget.
pub const TRUNCATION_MARKER: &str = "[TRUNCATED]";

/// Per-message allowance for role and framing tokens.
pub const MESSAGE_OVERHEAD_TOKENS: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("document text is empty")]
    EmptyDocument,
    #[error("requested {requested} examples but only {available} are available")]
    InsufficientExamples { requested: usize, available: usize },
    #[error("example document {0:?} is not available")]
    MissingExampleDocument(String),
    #[error("prompt needs at least {minimum} tokens but the budget is {budget}")]
    BudgetInfeasible { budget: usize, minimum: usize },
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::EmptyQuestion => "EmptyQuestion",
            PromptError::EmptyDocument => "EmptyDocument",
            PromptError::InsufficientExamples { .. } => "InsufficientExamples",
            PromptError::MissingExampleDocument(_) => "MissingExampleDocument",
            PromptError::BudgetInfeasible { .. } => "BudgetInfeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Question and document text a user message was rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TemplateFill {
    question: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<ChatMessage>,
    pub shot_mode: usize,
    pub truncation_applied: bool,
    pub token_estimate: usize,
    #[serde(skip)]
    fills: Vec<Option<TemplateFill>>,
}

impl PromptBundle {
    /// The final user message.
    pub fn query(&self) -> &ChatMessage {
        self.messages.last().expect("bundle always has a query message")
    }
}

/// Estimates the token length of a text. Implementations should err on the
/// high side.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / chars_per_token)`.
#[derive(Debug, Clone, Copy)]
pub struct CharHeuristic {
    pub chars_per_token: usize,
}

impl Default for CharHeuristic {
    fn default() -> Self {
        CharHeuristic { chars_per_token: 3 }
    }
}

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

/// Renders the template with Python `str.format` semantics.
pub fn render_template(question: &str, text: &str) -> String {
    let mut out = String::with_capacity(EXTRACTION_TEMPLATE.len() + question.len() + text.len());
    let mut rest = EXTRACTION_TEMPLATE;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{question}") {
            out.push_str(question);
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{text}") {
            out.push_str(text);
            rest = after;
        } else {
            unreachable!("template contains an unknown field at {i}");
        }
    }
    out.push_str(rest);
    out
}

fn user_message(question: &str, text: &str) -> (ChatMessage, Option<TemplateFill>) {
    (
        ChatMessage {
            role: Role::User,
            content: render_template(question, text),
        },
        Some(TemplateFill {
            question: question.to_string(),
            text: text.to_string(),
        }),
    )
}

fn estimate_messages(messages: &[ChatMessage], estimator: &dyn TokenEstimator) -> usize {
    messages
        .iter()
        .map(|m| estimator.estimate(&m.content) + MESSAGE_OVERHEAD_TOKENS)
        .sum()
}

/// A single user turn carrying the template for `target` over `doc`.
pub fn build_zero_shot(target: &ExtractionTarget, doc: &SourceDocument) -> Result<PromptBundle, PromptError> {
    if target.question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if doc.full_text.is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    let (message, fill) = user_message(&target.question, &doc.full_text);
    let messages = vec![message];
    Ok(PromptBundle {
        token_estimate: estimate_messages(&messages, &CharHeuristic::default()),
        messages,
        shot_mode: 0,
        truncation_applied: false,
        fills: vec![fill],
    })
}

/// `k` example turns (template over the example document, then the ideal
/// answer as compact JSON) followed by the query turn.
pub fn build_few_shot<F>(
    target: &ExtractionTarget,
    doc: &SourceDocument,
    k: usize,
    example_docs: F,
) -> Result<PromptBundle, PromptError>
where
    F: Fn(&str) -> Option<Arc<SourceDocument>>,
{
    if k == 0 {
        return build_zero_shot(target, doc);
    }
    if target.question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if doc.full_text.is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    if target.examples.len() < k {
        return Err(PromptError::InsufficientExamples {
            requested: k,
            available: target.examples.len(),
        });
    }
    let mut messages = Vec::with_capacity(2 * k + 1);
    let mut fills = Vec::with_capacity(2 * k + 1);
    for example in &target.examples[..k] {
        let example_doc = example_docs(&example.document_ref)
            .ok_or_else(|| PromptError::MissingExampleDocument(example.document_ref.clone()))?;
        let (message, fill) = user_message(&example.question, &example_doc.full_text);
        messages.push(message);
        fills.push(fill);
        messages.push(ChatMessage {
            role: Role::Assistant,
            content: serde_json::to_string(&example.ideal_answer).expect("ideal answer serializes"),
        });
        fills.push(None);
    }
    let (message, fill) = user_message(&target.question, &doc.full_text);
    messages.push(message);
    fills.push(fill);
    Ok(PromptBundle {
        token_estimate: estimate_messages(&messages, &CharHeuristic::default()),
        messages,
        shot_mode: k,
        truncation_applied: false,
        fills,
    })
}

/// Shrinks document texts until the bundle fits `budget` tokens.
///
/// Example documents are cut first, in order, then the query document.
/// Each cut keeps the longest prefix that fits and appends
/// [`TRUNCATION_MARKER`]. Message count and roles never change.
pub fn fit_to_budget(
    bundle: &PromptBundle,
    budget: usize,
    estimator: &dyn TokenEstimator,
) -> Result<PromptBundle, PromptError> {
    let mut out = bundle.clone();
    let mut total = estimate_messages(&out.messages, estimator);
    out.token_estimate = total;
    if total <= budget {
        return Ok(out);
    }

    let minimum: usize = out
        .messages
        .iter()
        .zip(&out.fills)
        .map(|(m, f)| {
            let content = match f {
                Some(fill) => render_template(&fill.question, TRUNCATION_MARKER),
                None => m.content.clone(),
            };
            estimator.estimate(&content).min(estimator.estimate(&m.content)) + MESSAGE_OVERHEAD_TOKENS
        })
        .sum();
    if minimum > budget {
        return Err(PromptError::BudgetInfeasible { budget, minimum });
    }

    // Example documents first, query document (last message) last.
    let order: Vec<usize> = (0..out.messages.len()).filter(|&i| out.fills[i].is_some()).collect();
    for idx in order {
        if total <= budget {
            break;
        }
        let fill = out.fills[idx].clone().expect("filtered on Some");
        let current = estimator.estimate(&out.messages[idx].content);
        let others = total - current;
        let allowance = budget.saturating_sub(others + MESSAGE_OVERHEAD_TOKENS);
        let chars: Vec<char> = fill.text.chars().collect();

        let render = |keep: usize| -> String {
            let mut text: String = chars[..keep].iter().collect();
            text.push_str(TRUNCATION_MARKER);
            render_template(&fill.question, &text)
        };
        // Largest prefix whose rendering fits the allowance.
        let (mut lo, mut hi) = (0usize, chars.len());
        let mut best: Option<(usize, String, usize)> = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let content = render(mid);
            let est = estimator.estimate(&content);
            if est <= allowance {
                best = Some((mid, content, est));
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let (keep, content, est) = match best {
            Some(b) => b,
            None => {
                let content = render(0);
                let est = estimator.estimate(&content);
                (0, content, est)
            }
        };
        if est >= current {
            continue;
        }
        out.messages[idx].content = content;
        out.fills[idx] = Some(TemplateFill {
            question: fill.question,
            text: chars[..keep].iter().collect::<String>() + TRUNCATION_MARKER,
        });
        out.truncation_applied = true;
        total = others + est;
    }
    out.token_estimate = total;
    if total > budget {
        return Err(PromptError::BudgetInfeasible { budget, minimum: total });
    }
    Ok(out)
}
