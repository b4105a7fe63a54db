use paperq_core::ingest::ingest_text;
use paperq_core::prompting::{build_zero_shot, render_template, EXTRACTION_TEMPLATE};
use paperq_core::registry::ExtractionTarget;

const GOLDEN: &str = include_str!("golden/zero_shot_q_t.txt");

#[test]
fn zero_shot_matches_golden_file() {
    let doc = ingest_text("T.", "d").unwrap();
    let bundle = build_zero_shot(&ExtractionTarget::custom("Q?"), &doc).unwrap();
    assert_eq!(bundle.messages.len(), 1);
    assert_eq!(bundle.query().content, GOLDEN);
}

#[test]
fn template_placeholders_and_escapes() {
    assert_eq!(EXTRACTION_TEMPLATE.matches("{question}").count(), 1);
    assert_eq!(EXTRACTION_TEMPLATE.matches("{text}").count(), 1);
    let rendered = render_template("Q?", "T.");
    assert!(!rendered.contains("{{") && !rendered.contains("}}"));
    assert_eq!(rendered.matches('{').count(), EXTRACTION_TEMPLATE.matches("{{").count());
}

#[test]
fn substituted_braces_are_kept_literally() {
    let doc = ingest_text("a {text} b {{c}}", "d").unwrap();
    let bundle = build_zero_shot(&ExtractionTarget::custom("what {question}?"), &doc).unwrap();
    let content = &bundle.query().content;
    assert!(content.contains("a {text} b {{c}}"));
    assert!(content.contains("what {question}?"));
}
