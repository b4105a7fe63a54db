//! Curated extraction targets and their few-shot examples.
//!
//! Question sets are loaded from JSON, validated, and stored as immutable
//! versioned snapshots.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsing::{normalize_answer, BINARY_LABELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Categorical,
    Binary,
    FreeText,
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerKind::Categorical => "categorical",
            AnswerKind::Binary => "binary",
            AnswerKind::FreeText => "free_text",
        })
    }
}

/// The chain-of-thought answer object a model is asked to return.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdealAnswer {
    pub reasoning: String,
    pub context: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub document_ref: String,
    pub question: String,
    pub ideal_answer: IdealAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionTarget {
    pub target_id: String,
    pub question: String,
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_vocabulary: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<FewShotExample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl ExtractionTarget {
    /// A zero-shot free-text target for an ad-hoc question.
    pub fn custom(question: impl Into<String>) -> Self {
        ExtractionTarget {
            target_id: "custom".to_string(),
            question: question.into(),
            kind: AnswerKind::FreeText,
            label_vocabulary: None,
            examples: Vec::new(),
            notes: None,
        }
    }

    /// Vocabulary used for answer normalization. Binary targets use the
    /// implicit yes/no/none vocabulary.
    pub fn vocabulary(&self) -> Option<Vec<String>> {
        match self.kind {
            AnswerKind::Binary => Some(BINARY_LABELS.iter().map(|s| s.to_string()).collect()),
            _ => self.label_vocabulary.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub set_id: String,
    pub title: String,
    pub version: u32,
    pub targets: Vec<ExtractionTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuestionSetSummary {
    pub set_id: String,
    pub title: String,
    pub version: u32,
    pub target_count: usize,
}

impl QuestionSet {
    pub fn target(&self, target_id: &str) -> Option<&ExtractionTarget> {
        self.targets.iter().find(|t| t.target_id == target_id)
    }

    pub fn summary(&self) -> QuestionSetSummary {
        QuestionSetSummary {
            set_id: self.set_id.clone(),
            title: self.title.clone(),
            version: self.version,
            target_count: self.targets.len(),
        }
    }

    /// Number of targets per kind as (categorical, binary, free_text).
    pub fn kind_counts(&self) -> (usize, usize, usize) {
        self.targets.iter().fold((0, 0, 0), |(c, b, f), t| match t.kind {
            AnswerKind::Categorical => (c + 1, b, f),
            AnswerKind::Binary => (c, b + 1, f),
            AnswerKind::FreeText => (c, b, f + 1),
        })
    }

    /// Fails with `DanglingExampleRef` if any example refers to an unknown
    /// document.
    pub fn check_example_refs(&self, exists: impl Fn(&str) -> bool) -> Result<(), RegistryError> {
        for (ti, target) in self.targets.iter().enumerate() {
            for (ei, ex) in target.examples.iter().enumerate() {
                if !exists(&ex.document_ref) {
                    return Err(RegistryError::DanglingExampleRef {
                        path: format!("targets[{ti}].examples[{ei}].document_ref"),
                        document_ref: ex.document_ref.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("question set serializes")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("duplicate target id {target_id:?} at {path}")]
    DuplicateTargetId { path: String, target_id: String },
    #[error("categorical target at {path} has no label_vocabulary")]
    MissingVocabulary { path: String },
    #[error("example at {path} refers to unknown document {document_ref:?}")]
    DanglingExampleRef { path: String, document_ref: String },
    #[error("question set {set_id:?} version {version} is not newer than {latest}")]
    StaleVersion { set_id: String, version: u32, latest: u32 },
    #[error("not found: {0}")]
    NotFound(String),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::SchemaViolation { .. } => "SCHEMA_VIOLATION",
            RegistryError::DuplicateTargetId { .. } => "DUPLICATE_TARGET_ID",
            RegistryError::MissingVocabulary { .. } => "MISSING_VOCABULARY",
            RegistryError::DanglingExampleRef { .. } => "DANGLING_EXAMPLE_REF",
            RegistryError::StaleVersion { .. } => "STALE_VERSION",
            RegistryError::NotFound(_) => "NOT_FOUND",
        }
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> RegistryError {
    RegistryError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a question-set JSON document.
pub fn load_question_set(source: &str) -> Result<QuestionSet, RegistryError> {
    let de = &mut serde_json::Deserializer::from_str(source);
    let set: QuestionSet = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        violation(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    validate(&set)?;
    Ok(set)
}

fn validate(set: &QuestionSet) -> Result<(), RegistryError> {
    if set.set_id.trim().is_empty() {
        return Err(violation("set_id", "must not be empty"));
    }
    let mut seen = HashSet::new();
    for (ti, target) in set.targets.iter().enumerate() {
        let path = format!("targets[{ti}]");
        if target.target_id.trim().is_empty() {
            return Err(violation(format!("{path}.target_id"), "must not be empty"));
        }
        if !seen.insert(target.target_id.as_str()) {
            return Err(RegistryError::DuplicateTargetId {
                path: format!("{path}.target_id"),
                target_id: target.target_id.clone(),
            });
        }
        if target.question.trim().is_empty() {
            return Err(violation(format!("{path}.question"), "must not be empty"));
        }
        match target.kind {
            AnswerKind::Categorical => {
                let vocab = target.label_vocabulary.as_deref().unwrap_or_default();
                if vocab.is_empty() {
                    return Err(RegistryError::MissingVocabulary { path });
                }
                if let Some(i) = vocab.iter().position(|l| l.trim().is_empty()) {
                    return Err(violation(format!("{path}.label_vocabulary[{i}]"), "empty label"));
                }
            }
            AnswerKind::Binary | AnswerKind::FreeText => {
                if target.label_vocabulary.is_some() {
                    return Err(violation(
                        format!("{path}.label_vocabulary"),
                        format!("not allowed for {} targets", target.kind),
                    ));
                }
            }
        }
        let vocab = target.vocabulary();
        for (ei, ex) in target.examples.iter().enumerate() {
            let epath = format!("{path}.examples[{ei}]");
            for (field, value) in [
                ("document_ref", &ex.document_ref),
                ("question", &ex.question),
                ("ideal_answer.reasoning", &ex.ideal_answer.reasoning),
                ("ideal_answer.context", &ex.ideal_answer.context),
                ("ideal_answer.answer", &ex.ideal_answer.answer),
            ] {
                if value.trim().is_empty() {
                    return Err(violation(format!("{epath}.{field}"), "must not be empty"));
                }
            }
            if target.kind != AnswerKind::FreeText {
                let norm = normalize_answer(&ex.ideal_answer.answer, target.kind, vocab.as_deref());
                if !norm.canonical {
                    return Err(violation(
                        format!("{epath}.ideal_answer.answer"),
                        format!("{:?} is not in the {} vocabulary", ex.ideal_answer.answer, target.kind),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Versioned store of immutable question-set snapshots.
#[derive(Debug, Default)]
pub struct Registry {
    sets: RwLock<HashMap<String, BTreeMap<u32, Arc<QuestionSet>>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and inserts a set. Versions must increase per `set_id`.
    pub fn insert(&self, set: QuestionSet) -> Result<Arc<QuestionSet>, RegistryError> {
        validate(&set)?;
        let mut sets = self.sets.write().expect("registry lock poisoned");
        let versions = sets.entry(set.set_id.clone()).or_default();
        if let Some((&latest, _)) = versions.last_key_value() {
            if set.version <= latest {
                return Err(RegistryError::StaleVersion {
                    set_id: set.set_id,
                    version: set.version,
                    latest,
                });
            }
        }
        let set = Arc::new(set);
        versions.insert(set.version, Arc::clone(&set));
        Ok(set)
    }

    pub fn load_str(&self, source: &str) -> Result<Arc<QuestionSet>, RegistryError> {
        self.insert(load_question_set(source)?)
    }

    /// Latest version unless `version` pins one.
    pub fn get_set(&self, set_id: &str, version: Option<u32>) -> Result<Arc<QuestionSet>, RegistryError> {
        let sets = self.sets.read().expect("registry lock poisoned");
        let versions = sets
            .get(set_id)
            .ok_or_else(|| RegistryError::NotFound(format!("question set {set_id:?}")))?;
        let found = match version {
            Some(v) => versions.get(&v),
            None => versions.last_key_value().map(|(_, s)| s),
        };
        found
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("question set {set_id:?} version {version:?}")))
    }

    pub fn get_target(
        &self,
        set_id: &str,
        target_id: &str,
        version: Option<u32>,
    ) -> Result<ExtractionTarget, RegistryError> {
        let set = self.get_set(set_id, version)?;
        set.target(target_id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("target {target_id:?} in set {set_id:?} v{}", set.version)))
    }

    /// Latest version of every set, ordered by id.
    pub fn list(&self) -> Vec<QuestionSetSummary> {
        let sets = self.sets.read().expect("registry lock poisoned");
        let mut out: Vec<_> = sets
            .values()
            .filter_map(|v| v.last_key_value().map(|(_, s)| s.summary()))
            .collect();
        out.sort_by(|a, b| a.set_id.cmp(&b.set_id));
        out
    }
}
