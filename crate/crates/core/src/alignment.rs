//! Maps a model-returned context passage back to character spans of the
//! source document.
//!
//! Exact hits are tried first. Otherwise every sentence of the context is
//! searched with windows of the sentence length ±20%, scored by character
//! trigram cosine. A coarse pass at a quarter-window stride picks candidate
//! regions which are then searched exhaustively.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SourceDocument;
use crate::text::normalize_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub threshold: f64,
    pub max_spans: usize,
    /// Relative window length slack around the sentence length.
    pub window_slack: f64,
    /// Coarse stride as a fraction of the window length.
    pub stride_fraction: f64,
    /// Coarse windows scoring at least `threshold - refine_margin` are refined.
    pub refine_margin: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            threshold: 0.75,
            max_spans: 5,
            window_slack: 0.2,
            stride_fraction: 0.25,
            refine_margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanMatch {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub page_number: Option<u32>,
    pub score: f64,
    pub verbatim: bool,
    /// The context fragment the span was scored against.
    pub query: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("context is empty")]
    EmptyContext,
}

pub fn align_context(context: &str, doc: &SourceDocument) -> Result<Vec<SpanMatch>, AlignError> {
    align_context_with(context, doc, &AlignConfig::default())
}

pub fn align_context_with(
    context: &str,
    doc: &SourceDocument,
    config: &AlignConfig,
) -> Result<Vec<SpanMatch>, AlignError> {
    let context = normalize_text(context);
    if context.is_empty() {
        return Err(AlignError::EmptyContext);
    }
    let doc_chars: Vec<char> = doc.full_text.chars().map(flatten_newline).collect();
    let ctx_chars: Vec<char> = context.chars().map(flatten_newline).collect();

    let exact = find_all(&doc_chars, &ctx_chars, config.max_spans);
    if !exact.is_empty() {
        let query: String = ctx_chars.iter().collect();
        return Ok(exact
            .into_iter()
            .map(|start| span(doc, start, start + ctx_chars.len(), 1.0, true, query.clone()))
            .collect());
    }

    let folded_doc: Vec<char> = doc_chars.iter().map(|&c| fold_case(c)).collect();
    let doc_keys = trigram_keys(&folded_doc);

    let mut hits = Vec::new();
    for (order, sentence) in split_sentences(&ctx_chars).into_iter().enumerate() {
        let exact = find_all(&doc_chars, &sentence, config.max_spans);
        let text: String = sentence.iter().collect();
        if !exact.is_empty() {
            hits.extend(exact.into_iter().map(|start| Hit {
                start,
                end: start + sentence.len(),
                score: 1.0,
                verbatim: true,
                order,
                query: text.clone(),
            }));
            continue;
        }
        let folded: Vec<char> = sentence.iter().map(|&c| fold_case(c)).collect();
        for w in search_sentence(&doc_keys, folded_doc.len(), &folded, config) {
            let score = w.score();
            if score >= config.threshold {
                hits.push(Hit {
                    start: w.start,
                    end: w.start + w.len,
                    score,
                    verbatim: false,
                    order,
                    query: text.clone(),
                });
            }
        }
    }

    let merged = merge_hits(hits, &folded_doc, config.threshold);
    Ok(merged
        .into_iter()
        .take(config.max_spans)
        .map(|h| span(doc, h.start, h.end, h.score, h.verbatim, h.query))
        .collect())
}

/// Trigram cosine between two texts after the same folding the aligner uses.
pub fn trigram_cosine(a: &str, b: &str) -> f64 {
    let fa: Vec<char> = a.chars().map(flatten_newline).map(fold_case).collect();
    let fb: Vec<char> = b.chars().map(flatten_newline).map(fold_case).collect();
    let pa = profile(&trigram_keys(&fa));
    let pb = profile(&trigram_keys(&fb));
    let dot: i64 = pa.iter().map(|(k, v)| v * pb.get(k).copied().unwrap_or(0)).sum();
    let na: i64 = pa.values().map(|v| v * v).sum();
    let nb: i64 = pb.values().map(|v| v * v).sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    dot as f64 / ((na as f64) * (nb as f64)).sqrt()
}

fn span(doc: &SourceDocument, start: usize, end: usize, score: f64, verbatim: bool, query: String) -> SpanMatch {
    SpanMatch {
        doc_id: doc.doc_id.clone(),
        start,
        end,
        page_number: doc.page_at(start),
        score,
        verbatim,
        query,
    }
}

fn flatten_newline(c: char) -> char {
    if c == '\n' {
        ' '
    } else {
        c
    }
}

/// Lowercase mapping that keeps a 1:1 char correspondence.
fn fold_case(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn find_all(haystack: &[char], needle: &[char], limit: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > haystack.len() {
        return out;
    }
    let mut i = 0;
    while i + needle.len() <= haystack.len() && out.len() < limit {
        if haystack[i..i + needle.len()] == *needle {
            out.push(i);
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out
}

/// Splits after `.`, `!` or `?` followed by a space. Fragments shorter than
/// a trigram are dropped.
fn split_sentences(chars: &[char]) -> Vec<Vec<char>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let boundary = matches!(chars[i], '.' | '!' | '?') && chars.get(i + 1).is_some_and(|c| *c == ' ');
        if boundary || i + 1 == chars.len() {
            let piece: Vec<char> = chars[start..=i].to_vec();
            let trimmed = trim_spaces(&piece);
            if trimmed.len() >= 3 {
                out.push(trimmed.to_vec());
            }
            start = i + 1;
        }
    }
    out
}

fn trim_spaces(s: &[char]) -> &[char] {
    let a = s.iter().position(|c| *c != ' ').unwrap_or(s.len());
    let b = s.iter().rposition(|c| *c != ' ').map(|i| i + 1).unwrap_or(a);
    &s[a..b]
}

fn trigram_keys(chars: &[char]) -> Vec<u64> {
    chars
        .windows(3)
        .map(|w| ((w[0] as u64) << 42) | ((w[1] as u64) << 21) | w[2] as u64)
        .collect()
}

fn profile(keys: &[u64]) -> HashMap<u64, i64> {
    let mut m = HashMap::with_capacity(keys.len());
    for &k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Integer statistics of one window; cosine = dot / sqrt(norm2 * query_norm2).
#[derive(Debug, Clone, Copy)]
struct Window {
    start: usize,
    len: usize,
    dot: i64,
    norm2: i64,
    query_norm2: i64,
}

impl Window {
    fn score(&self) -> f64 {
        if self.norm2 == 0 || self.query_norm2 == 0 {
            return 0.0;
        }
        self.dot as f64 / ((self.norm2 as f64) * (self.query_norm2 as f64)).sqrt()
    }

    /// Exact ordering: higher score, then earlier start, then shorter.
    fn better_than(&self, other: &Window) -> bool {
        let lhs = (self.dot.max(0) as u128).pow(2) * other.norm2 as u128;
        let rhs = (other.dot.max(0) as u128).pow(2) * self.norm2 as u128;
        let lhs_zero = self.norm2 == 0 || self.dot <= 0;
        let rhs_zero = other.norm2 == 0 || other.dot <= 0;
        let ord = match (lhs_zero, rhs_zero) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (false, false) => lhs.cmp(&rhs),
        };
        match ord {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.start, self.len) < (other.start, other.len),
        }
    }
}

/// Slides a window of `len` chars over starts `first..=last`, calling `visit`
/// for every start in `keep` positions.
fn slide(
    doc_keys: &[u64],
    query: &HashMap<u64, i64>,
    query_norm2: i64,
    len: usize,
    first: usize,
    last: usize,
    mut visit: impl FnMut(Window),
) {
    let tri = len.saturating_sub(2);
    let mut counts: HashMap<u64, i64> = HashMap::with_capacity(tri * 2);
    let mut dot = 0i64;
    let mut norm2 = 0i64;
    let add = |k: u64, counts: &mut HashMap<u64, i64>, dot: &mut i64, norm2: &mut i64, sign: i64| {
        let c = counts.entry(k).or_insert(0);
        if sign > 0 {
            *norm2 += 2 * *c + 1;
            *c += 1;
        } else {
            *c -= 1;
            *norm2 -= 2 * *c + 1;
        }
        *dot += sign * query.get(&k).copied().unwrap_or(0);
    };
    for &k in &doc_keys[first..first + tri] {
        add(k, &mut counts, &mut dot, &mut norm2, 1);
    }
    let mut start = first;
    loop {
        visit(Window {
            start,
            len,
            dot,
            norm2,
            query_norm2,
        });
        if start == last {
            break;
        }
        if tri > 0 {
            add(doc_keys[start], &mut counts, &mut dot, &mut norm2, -1);
            add(doc_keys[start + tri], &mut counts, &mut dot, &mut norm2, 1);
        }
        start += 1;
    }
}

/// Best window per candidate region for one sentence.
fn search_sentence(doc_keys: &[u64], doc_len: usize, sentence: &[char], config: &AlignConfig) -> Vec<Window> {
    let n = sentence.len();
    if n < 3 || doc_len < 3 {
        return Vec::new();
    }
    let query = profile(&trigram_keys(sentence));
    let query_norm2: i64 = query.values().map(|v| v * v).sum();

    let hi = ((n as f64 * (1.0 + config.window_slack)).ceil() as usize).min(doc_len);
    let lo = ((n as f64 * (1.0 - config.window_slack)).floor() as usize).clamp(3, hi.max(3)).min(hi);
    if hi < 3 {
        return Vec::new();
    }

    // Coarse pass.
    let mut coarse_lengths = vec![lo, n.clamp(lo, hi), hi];
    coarse_lengths.dedup();
    let floor = config.threshold - config.refine_margin;
    let mut best_coarse: Option<Window> = None;
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for &len in &coarse_lengths {
        let stride = ((len as f64 * config.stride_fraction) as usize).max(1);
        let last = doc_len - len;
        slide(doc_keys, &query, query_norm2, len, 0, last, |w| {
            if w.start % stride != 0 && w.start != last {
                return;
            }
            if best_coarse.is_none_or(|b| w.better_than(&b)) {
                best_coarse = Some(w);
            }
            if w.score() >= floor {
                regions.push((w.start.saturating_sub(stride), w.start + stride));
            }
        });
    }
    if let Some(b) = best_coarse {
        let stride = ((b.len as f64 * config.stride_fraction) as usize).max(1);
        regions.push((b.start.saturating_sub(stride), b.start + stride));
    }

    regions.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (a, b) in regions {
        match merged.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }

    // Exhaustive search inside each region.
    let mut out = Vec::new();
    for (a, b) in merged {
        let mut best: Option<Window> = None;
        for len in lo..=hi {
            let last = b.min(doc_len - len);
            if a > last {
                continue;
            }
            slide(doc_keys, &query, query_norm2, len, a, last, |w| {
                if best.is_none_or(|cur| w.better_than(&cur)) {
                    best = Some(w);
                }
            });
        }
        out.extend(best);
    }
    out
}

#[derive(Debug, Clone)]
struct Hit {
    start: usize,
    end: usize,
    score: f64,
    verbatim: bool,
    order: usize,
    query: String,
}

fn overlaps(a: &Hit, b: &Hit) -> bool {
    a.start < b.end && b.start < a.end
}

fn rank(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.start.cmp(&b.start))
        .then(a.end.cmp(&b.end))
}

/// Groups overlapping hits. A group becomes one span over its union when
/// the union still clears the threshold against the joined sentences;
/// otherwise its members are kept greedily without overlap.
fn merge_hits(mut hits: Vec<Hit>, folded_doc: &[char], threshold: f64) -> Vec<Hit> {
    hits.sort_by(rank);
    let mut groups: Vec<Vec<Hit>> = Vec::new();
    for hit in hits {
        let touching: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().any(|h| overlaps(h, &hit)))
            .map(|(i, _)| i)
            .collect();
        match touching.split_first() {
            None => groups.push(vec![hit]),
            Some((&first, rest)) => {
                for &i in rest.iter().rev() {
                    let moved = groups.remove(i);
                    groups[first].extend(moved);
                }
                groups[first].push(hit);
            }
        }
    }

    let mut out = Vec::new();
    for mut group in groups {
        if group.len() == 1 {
            out.extend(group);
            continue;
        }
        group.sort_by(rank);
        let start = group.iter().map(|h| h.start).min().unwrap_or(0);
        let end = group.iter().map(|h| h.end).max().unwrap_or(0);
        let mut members: Vec<&Hit> = group.iter().collect();
        members.sort_by_key(|h| (h.order, h.start));
        members.dedup_by_key(|h| h.order);
        let query = members.iter().map(|h| h.query.as_str()).collect::<Vec<_>>().join(" ");
        let region: String = folded_doc[start..end].iter().collect();
        let score = trigram_cosine(&region, &query);
        if members.len() > 1 && score >= threshold {
            out.push(Hit {
                start,
                end,
                score,
                verbatim: false,
                order: members[0].order,
                query,
            });
        } else {
            let mut kept: Vec<Hit> = Vec::new();
            for h in group {
                if !kept.iter().any(|k| overlaps(k, &h)) {
                    kept.push(h);
                }
            }
            out.extend(kept);
        }
    }
    out.sort_by(rank);
    out
}
