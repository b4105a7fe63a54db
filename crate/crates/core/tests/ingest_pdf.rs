mod common;

use paperq_core::ingest::{ingest_bytes, ingest_pdf, IngestError};
use paperq_core::text::normalize_text;

const PAGES: [&[&str]; 3] = [
    &["Process mining on event logs", "uses a BPMN notation."],
    &["The study evaluates a case study", "with 12 participants."],
    &["Conclusions follow."],
];

#[test]
fn three_page_pdf_has_three_slices() {
    let bytes = common::text_pdf(&PAGES);
    let doc = ingest_pdf(&bytes, "d1").unwrap();
    assert_eq!(doc.pages.len(), 3);
    assert_eq!(doc.pages.iter().map(|p| p.page_number).collect::<Vec<_>>(), vec![1, 2, 3]);
    doc.validate().unwrap();
    for (page, lines) in doc.pages.iter().zip(PAGES) {
        let text = doc.page_text(page);
        for line in lines {
            assert!(text.contains(line), "page {} missing {line:?}: {text:?}", page.page_number);
        }
    }
    assert_eq!(doc.ingest_meta.byte_size, bytes.len());
}

#[test]
fn matches_independent_decoder_modulo_whitespace() {
    let bytes = common::text_pdf(&PAGES);
    let doc = ingest_pdf(&bytes, "d1").unwrap();
    // lopdf drops line breaks from T*, so compare with all whitespace removed.
    let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    for (page, oracle) in doc.pages.iter().zip(common::lopdf_page_texts(&bytes)) {
        assert_eq!(squash(doc.page_text(page)), squash(&normalize_text(&oracle)));
    }
}

#[test]
fn ingest_is_deterministic() {
    let bytes = common::text_pdf(&PAGES);
    let a = ingest_bytes(&bytes, "a").unwrap();
    let b = ingest_bytes(&bytes, "b").unwrap();
    assert_eq!(a.full_text, b.full_text);
    assert_eq!(a.pages, b.pages);
}

#[test]
fn image_only_pdf_has_no_text_layer() {
    let err = ingest_pdf(&common::image_only_pdf(), "img").unwrap_err();
    assert_eq!(err, IngestError::NoTextLayer);
    assert_eq!(err.code(), "NO_TEXT_LAYER");
}

#[test]
fn truncated_pdf_is_malformed() {
    let bytes = common::text_pdf(&PAGES);
    let err = ingest_pdf(&bytes[..bytes.len() / 3], "t").unwrap_err();
    assert!(matches!(err, IngestError::MalformedPdf(_)), "{err:?}");
}
