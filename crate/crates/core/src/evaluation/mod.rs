//! Benchmark scoring: gold annotations, the three metric families, the
//! overall score and Table-style reports.

mod bertscore;
mod metrics;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bertscore::{
    bertscore, bertscore_f1, cosine, BertScore, EmbeddingProvider, HttpEmbeddingProvider, OneHotProvider,
    TokenEmbedding, Vector,
};
pub use metrics::{bin_f1, exact_acc, jaccard_token_set, overall_score, EXACT_MATCH_THRESHOLD};
pub use report::{emit_report, parse_csv_report, ReportFormat};

use crate::parsing::{normalize_answer, normalize_surface};
use crate::records::ExtractionRecord;
use crate::registry::AnswerKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("gold label {0:?} is not one of yes/no/none")]
    InvalidGoldLabel(String),
    #[error("{metric} = {value} is outside [0, 1]")]
    OutOfRange { metric: &'static str, value: f64 },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("text has no tokens")]
    EmptyText,
    #[error("kind mismatch for ({doc_id}, {target_id}): gold is {gold}, result is {result}")]
    KindMismatch {
        doc_id: String,
        target_id: String,
        gold: AnswerKind,
        result: AnswerKind,
    },
    #[error("duplicate result for ({0}, {1})")]
    DuplicateResult(String, String),
    #[error("duplicate gold annotation for ({0}, {1})")]
    DuplicateGold(String, String),
    #[error("results without a gold annotation: {}", .0.iter().map(|(d, t)| format!("({d}, {t})")).collect::<Vec<_>>().join(", "))]
    UnmatchedResults(Vec<(String, String)>),
    #[error("report rendering failed: {0}")]
    Render(String),
    #[error("gold line {line}: {message}")]
    GoldSchema { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldAnnotation {
    pub doc_id: String,
    pub target_id: String,
    pub kind: AnswerKind,
    pub gold_answer: String,
}

/// Parses JSON-lines gold annotations. Blank lines are skipped; errors cite
/// the 1-based line number.
pub fn parse_gold_jsonl(source: &str) -> Result<Vec<GoldAnnotation>, EvalError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let gold: GoldAnnotation = serde_json::from_str(line).map_err(|e| EvalError::GoldSchema {
            line: line_no,
            message: e.to_string(),
        })?;
        if gold.doc_id.is_empty() || gold.target_id.is_empty() {
            return Err(EvalError::GoldSchema {
                line: line_no,
                message: "doc_id and target_id must be non-empty".into(),
            });
        }
        if gold.kind == AnswerKind::Binary && !normalize_answer(&gold.gold_answer, AnswerKind::Binary, None).canonical {
            return Err(EvalError::GoldSchema {
                line: line_no,
                message: format!("binary gold answer {:?} is not yes/no/none", gold.gold_answer),
            });
        }
        if !seen.insert((gold.doc_id.clone(), gold.target_id.clone())) {
            return Err(EvalError::GoldSchema {
                line: line_no,
                message: format!("duplicate annotation for ({}, {})", gold.doc_id, gold.target_id),
            });
        }
        out.push(gold);
    }
    if out.is_empty() {
        return Err(EvalError::GoldSchema {
            line: 0,
            message: "gold file contains no annotations".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub categorical: usize,
    pub binary: usize,
    pub free_text: usize,
}

impl KindCounts {
    fn bump(&mut self, kind: AnswerKind) {
        match kind {
            AnswerKind::Categorical => self.categorical += 1,
            AnswerKind::Binary => self.binary += 1,
            AnswerKind::FreeText => self.free_text += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.categorical + self.binary + self.free_text
    }
}

/// Scores for one (model, shot mode). A metric whose kind has no
/// annotations is reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub shot_mode: usize,
    pub exact_acc: f64,
    pub bin_f1: f64,
    pub bert_f1: f64,
    pub overall: f64,
    pub per_target: BTreeMap<String, f64>,
    /// Annotations per kind.
    pub counts: KindCounts,
    /// Distinct targets per kind.
    pub target_counts: KindCounts,
    pub parse_failures: usize,
    pub parse_failure_rate: f64,
    pub embedding_provider: String,
}

impl MetricReport {
    /// Row label in the `model (k-shot)` style.
    pub fn label(&self) -> String {
        format!("{} ({}-shot)", self.model, self.shot_mode)
    }
}

/// Scores one (model, shot mode) run against the gold annotations.
///
/// Every annotation is routed to its kind's metric; annotations without a
/// successful extraction count as wrong. Inputs are processed in sorted
/// order so the report does not depend on input order.
pub fn run_benchmark(
    gold: &[GoldAnnotation],
    results: &[ExtractionRecord],
    provider: &dyn EmbeddingProvider,
    model: &str,
    shot_mode: usize,
) -> Result<MetricReport, EvalError> {
    let mut gold_sorted: Vec<&GoldAnnotation> = gold.iter().collect();
    gold_sorted.sort_by(|a, b| (&a.doc_id, &a.target_id).cmp(&(&b.doc_id, &b.target_id)));
    for pair in gold_sorted.windows(2) {
        if pair[0].doc_id == pair[1].doc_id && pair[0].target_id == pair[1].target_id {
            return Err(EvalError::DuplicateGold(pair[0].doc_id.clone(), pair[0].target_id.clone()));
        }
    }

    let mut by_key: HashMap<(&str, &str), &ExtractionRecord> = HashMap::new();
    for r in results {
        if by_key.insert((&r.doc_id, &r.target_id), r).is_some() {
            return Err(EvalError::DuplicateResult(r.doc_id.clone(), r.target_id.clone()));
        }
    }
    let gold_keys: HashSet<(&str, &str)> = gold.iter().map(|g| (g.doc_id.as_str(), g.target_id.as_str())).collect();
    let mut unmatched: Vec<(String, String)> = by_key
        .keys()
        .filter(|k| !gold_keys.contains(*k))
        .map(|(d, t)| (d.to_string(), t.to_string()))
        .collect();
    if !unmatched.is_empty() {
        unmatched.sort();
        return Err(EvalError::UnmatchedResults(unmatched));
    }

    let mut counts = KindCounts::default();
    let mut target_kinds: BTreeMap<&str, AnswerKind> = BTreeMap::new();
    let mut categorical: BTreeMap<&str, Vec<(Option<String>, String)>> = BTreeMap::new();
    let mut binary: BTreeMap<&str, Vec<(Option<String>, String)>> = BTreeMap::new();
    let mut free_text: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut failures = 0usize;

    for g in &gold_sorted {
        counts.bump(g.kind);
        target_kinds.insert(&g.target_id, g.kind);
        let result = by_key.get(&(g.doc_id.as_str(), g.target_id.as_str()));
        if let Some(r) = result {
            if r.kind != g.kind {
                return Err(EvalError::KindMismatch {
                    doc_id: g.doc_id.clone(),
                    target_id: g.target_id.clone(),
                    gold: g.kind,
                    result: r.kind,
                });
            }
        }
        let extraction = result.and_then(|r| r.extraction.as_ref());
        if extraction.is_none() {
            failures += 1;
        }
        match g.kind {
            AnswerKind::Categorical => {
                let pred = extraction.map(|e| e.normalized_answer.clone());
                categorical
                    .entry(&g.target_id)
                    .or_default()
                    .push((pred, normalize_surface(&g.gold_answer)));
            }
            AnswerKind::Binary => {
                let gold_label = normalize_answer(&g.gold_answer, AnswerKind::Binary, None);
                if !gold_label.canonical {
                    return Err(EvalError::InvalidGoldLabel(g.gold_answer.clone()));
                }
                let pred = extraction.filter(|e| !e.non_canonical).map(|e| e.normalized_answer.clone());
                binary.entry(&g.target_id).or_default().push((pred, gold_label.text));
            }
            AnswerKind::FreeText => {
                let score = match extraction {
                    None => 0.0,
                    Some(e) => match bertscore_f1(&e.answer, &g.gold_answer, provider) {
                        Ok(f1) => f1,
                        Err(EvalError::EmptyText) => 0.0,
                        Err(other) => return Err(other),
                    },
                };
                free_text.entry(&g.target_id).or_default().push(score);
            }
        }
    }

    fn as_refs(pairs: &[(Option<String>, String)]) -> Vec<(Option<&str>, &str)> {
        pairs.iter().map(|(p, g)| (p.as_deref(), g.as_str())).collect()
    }

    let mut per_target = BTreeMap::new();
    for (t, pairs) in &categorical {
        per_target.insert(t.to_string(), exact_acc(&as_refs(pairs))?);
    }
    for (t, pairs) in &binary {
        per_target.insert(t.to_string(), bin_f1(&as_refs(pairs))?);
    }
    for (t, scores) in &free_text {
        per_target.insert(t.to_string(), scores.iter().sum::<f64>() / scores.len() as f64);
    }

    let all_categorical: Vec<_> = categorical.values().flatten().cloned().collect();
    let all_binary: Vec<_> = binary.values().flatten().cloned().collect();
    let all_free: Vec<f64> = free_text.values().flatten().copied().collect();

    let exact = if all_categorical.is_empty() { 0.0 } else { exact_acc(&as_refs(&all_categorical))? };
    let binf1 = if all_binary.is_empty() { 0.0 } else { bin_f1(&as_refs(&all_binary))? };
    let bert = if all_free.is_empty() { 0.0 } else { all_free.iter().sum::<f64>() / all_free.len() as f64 };

    let mut target_counts = KindCounts::default();
    for kind in target_kinds.values() {
        target_counts.bump(*kind);
    }
    let total = counts.total();
    Ok(MetricReport {
        model: model.to_string(),
        shot_mode,
        exact_acc: exact,
        bin_f1: binf1,
        bert_f1: bert,
        overall: overall_score(exact, binf1, bert)?,
        per_target,
        counts,
        target_counts,
        parse_failures: failures,
        parse_failure_rate: if total == 0 { 0.0 } else { failures as f64 / total as f64 },
        embedding_provider: provider.id(),
    })
}
