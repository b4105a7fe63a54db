//! Per-(document, target) extraction outcome shared by the CLI, the service
//! and the benchmark scorer.

use serde::{Deserialize, Serialize};

use crate::alignment::SpanMatch;
use crate::parsing::ParsedExtraction;
use crate::registry::AnswerKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub target_id: String,
    pub kind: AnswerKind,
    pub model: String,
    pub shot_mode: usize,
    #[serde(default)]
    pub extraction: Option<ParsedExtraction>,
    #[serde(default)]
    pub error: Option<RecordError>,
    #[serde(default)]
    pub spans: Vec<SpanMatch>,
    /// Set when a context was returned but no source passage matched it.
    #[serde(default)]
    pub unverifiable: bool,
    #[serde(default)]
    pub completion_id: Option<String>,
}

impl ExtractionRecord {
    pub fn is_success(&self) -> bool {
        self.extraction.is_some()
    }
}
