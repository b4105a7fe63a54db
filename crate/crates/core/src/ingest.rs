//! Document ingestion: PDF or plain text in, normalized text with a page
//! offset map out.

use std::panic::{catch_unwind, AssertUnwindSafe};

use chrono::{DateTime, Utc};
use pdf_extract::content::Content;
use pdf_extract::{Document, PlainTextOutput};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, char_slice, normalize_text};

/// Identifies the extraction pipeline recorded in [`IngestMeta`].
pub const EXTRACTOR_VERSION: &str = concat!("paperq-ingest/", env!("CARGO_PKG_VERSION"), "+pdf-extract-0.9+nfkc");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("malformed PDF: {0}")]
    MalformedPdf(String),
    #[error("PDF has no extractable text layer")]
    NoTextLayer,
    #[error("document contains no text")]
    EmptyDocument,
}

impl IngestError {
    /// Machine-readable code used by the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::MalformedPdf(_) => "MALFORMED_PDF",
            IngestError::NoTextLayer => "NO_TEXT_LAYER",
            IngestError::EmptyDocument => "EMPTY_DOCUMENT",
        }
    }
}

/// A page's extent in `full_text`, in char offsets, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSlice {
    pub page_number: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub source_filename: Option<String>,
    pub byte_size: usize,
    pub ingested_at: DateTime<Utc>,
    pub extractor_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: Option<String>,
    pub full_text: String,
    pub pages: Vec<PageSlice>,
    pub ingest_meta: IngestMeta,
}

impl SourceDocument {
    /// Length of `full_text` in chars.
    pub fn char_len(&self) -> usize {
        char_len(&self.full_text)
    }

    /// Page containing the char offset, if any.
    pub fn page_at(&self, offset: usize) -> Option<u32> {
        let idx = self.pages.partition_point(|p| p.end <= offset);
        self.pages
            .get(idx)
            .filter(|p| p.start <= offset)
            .map(|p| p.page_number)
    }

    /// Text of one page slice.
    pub fn page_text(&self, page: &PageSlice) -> &str {
        char_slice(&self.full_text, page.start, page.end)
    }

    pub fn with_filename(mut self, name: impl Into<String>) -> Self {
        self.ingest_meta.source_filename = Some(name.into());
        self
    }

    /// Checks the coverage and ordering invariants of the page map.
    pub fn validate(&self) -> Result<(), String> {
        if self.full_text.is_empty() {
            return Err("full_text is empty".into());
        }
        let mut expected_start = 0;
        let mut last_page = 0;
        for p in &self.pages {
            if p.start != expected_start {
                return Err(format!("page {} starts at {} not {}", p.page_number, p.start, expected_start));
            }
            if p.start >= p.end {
                return Err(format!("page {} is empty", p.page_number));
            }
            if p.page_number <= last_page {
                return Err(format!("page {} out of order", p.page_number));
            }
            expected_start = p.end;
            last_page = p.page_number;
        }
        if expected_start != self.char_len() {
            return Err("pages do not cover full_text".into());
        }
        Ok(())
    }
}

/// Ingests PDF bytes. Each page is normalized independently and the pages
/// are joined with a line feed that belongs to the preceding page.
pub fn ingest_pdf(bytes: &[u8], doc_id: &str) -> Result<SourceDocument, IngestError> {
    let page_texts = extract_pdf_pages(bytes)?;
    let normalized: Vec<String> = page_texts.iter().map(|t| normalize_text(t)).collect();
    let doc = assemble(doc_id, &normalized, bytes.len())?;
    Ok(doc)
}

/// Ingests plain UTF-8 text as a single page.
pub fn ingest_text(text: &str, doc_id: &str) -> Result<SourceDocument, IngestError> {
    let normalized = normalize_text(text);
    assemble(doc_id, &[normalized], text.len())
}

/// Ingests by sniffing the `%PDF-` header; anything else must be UTF-8 text.
pub fn ingest_bytes(bytes: &[u8], doc_id: &str) -> Result<SourceDocument, IngestError> {
    if looks_like_pdf(bytes) {
        ingest_pdf(bytes, doc_id)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| IngestError::MalformedPdf(format!("neither PDF nor UTF-8 text: {e}")))?;
        ingest_text(text, doc_id)
    }
}

pub fn looks_like_pdf(bytes: &[u8]) -> bool {
    let head = &bytes[..bytes.len().min(1024)];
    head.windows(5).any(|w| w == b"%PDF-")
}

fn assemble(doc_id: &str, pages: &[String], byte_size: usize) -> Result<SourceDocument, IngestError> {
    if pages.iter().all(|p| p.is_empty()) {
        return Err(IngestError::EmptyDocument);
    }
    let mut full_text = String::new();
    let mut slices = Vec::with_capacity(pages.len());
    let mut offset = 0;
    let last = pages.len() - 1;
    for (i, page) in pages.iter().enumerate() {
        let mut chunk = page.clone();
        if i < last || chunk.is_empty() {
            chunk.push('\n');
        }
        let len = char_len(&chunk);
        slices.push(PageSlice {
            page_number: i as u32 + 1,
            start: offset,
            end: offset + len,
        });
        offset += len;
        full_text.push_str(&chunk);
    }
    Ok(SourceDocument {
        doc_id: doc_id.to_string(),
        title: None,
        full_text,
        pages: slices,
        ingest_meta: IngestMeta {
            source_filename: None,
            byte_size,
            ingested_at: Utc::now(),
            extractor_version: EXTRACTOR_VERSION.to_string(),
        },
    })
}

fn extract_pdf_pages(bytes: &[u8]) -> Result<Vec<String>, IngestError> {
    // The extractor asserts on some malformed inputs instead of erroring.
    let result = catch_unwind(AssertUnwindSafe(|| extract_pdf_pages_inner(bytes)));
    match result {
        Ok(r) => r,
        Err(_) => Err(IngestError::MalformedPdf("extractor aborted on malformed content".into())),
    }
}

fn extract_pdf_pages_inner(bytes: &[u8]) -> Result<Vec<String>, IngestError> {
    let doc = Document::load_mem(bytes).map_err(|e| IngestError::MalformedPdf(e.to_string()))?;
    if doc.is_encrypted() {
        return Err(IngestError::MalformedPdf("encrypted PDFs are not supported".into()));
    }
    let pages = doc.get_pages();
    if pages.is_empty() {
        return Err(IngestError::MalformedPdf("document has no pages".into()));
    }
    let mut has_text_ops = false;
    let mut texts = Vec::with_capacity(pages.len());
    for (&number, &object_id) in &pages {
        if !has_text_ops {
            has_text_ops = page_has_text_operators(&doc, object_id);
        }
        let mut text = String::new();
        {
            let mut out = PlainTextOutput::new(&mut text);
            pdf_extract::output_doc_page(&doc, &mut out, number)
                .map_err(|e| IngestError::MalformedPdf(format!("page {number}: {e}")))?;
        }
        texts.push(text);
    }
    if texts.iter().all(|t| t.trim().is_empty()) {
        return Err(if has_text_ops {
            IngestError::EmptyDocument
        } else {
            IngestError::NoTextLayer
        });
    }
    Ok(texts)
}

fn page_has_text_operators(doc: &Document, page: pdf_extract::ObjectId) -> bool {
    let Ok(data) = doc.get_page_content(page) else {
        return false;
    };
    let Ok(content) = Content::decode(&data) else {
        return false;
    };
    content
        .operations
        .iter()
        .any(|op| matches!(op.operator.as_str(), "Tj" | "TJ" | "'" | "\""))
}
