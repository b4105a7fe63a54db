//! Metric kernels: token-set Jaccard, ExactAcc, macro BinF1 and the overall
//! mean.

use std::collections::BTreeSet;

use crate::parsing::BINARY_LABELS;
use crate::text::metric_tokens;

use super::EvalError;

/// Inclusive Jaccard threshold for a categorical prediction to count as
/// correct.
pub const EXACT_MATCH_THRESHOLD: f64 = 0.8;

/// |A∩B| / |A∪B| over normalized token sets; two empty sets score 1.
pub fn jaccard_token_set(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = metric_tokens(a).into_iter().collect();
    let b: BTreeSet<String> = metric_tokens(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Fraction of predictions whose Jaccard similarity with gold is at least
/// [`EXACT_MATCH_THRESHOLD`]. Missing predictions are wrong.
pub fn exact_acc(pairs: &[(Option<&str>, &str)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let correct = pairs
        .iter()
        .filter(|(pred, gold)| pred.is_some_and(|p| jaccard_token_set(p, gold) >= EXACT_MATCH_THRESHOLD))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Macro-averaged one-vs-rest F1 over the classes present in gold.
///
/// Predictions outside `{yes, no, none}` (or missing) are false negatives
/// for the gold class and never positives for any class.
pub fn bin_f1(pairs: &[(Option<&str>, &str)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some((_, bad)) = pairs.iter().find(|(_, g)| !BINARY_LABELS.contains(g)) {
        return Err(EvalError::InvalidGoldLabel(bad.to_string()));
    }
    let mut sum = 0.0;
    let mut classes = 0;
    for label in BINARY_LABELS {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (pred, gold) in pairs {
            let predicted = pred.filter(|p| BINARY_LABELS.contains(p));
            match (predicted == Some(label), *gold == label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        if tp + fneg == 0 {
            continue;
        }
        classes += 1;
        sum += (2 * tp) as f64 / (2 * tp + fp + fneg) as f64;
    }
    Ok(sum / classes as f64)
}

/// Unweighted mean of the three metric families.
pub fn overall_score(exact_acc: f64, bin_f1: f64, bert_f1: f64) -> Result<f64, EvalError> {
    for (name, v) in [("exact_acc", exact_acc), ("bin_f1", bin_f1), ("bert_f1", bert_f1)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange { metric: name, value: v });
        }
    }
    Ok((exact_acc + bin_f1 + bert_f1) / 3.0)
}
