//! Canned answers for the benchmark fixture under `fixtures/bench`.
//!
//! The document is recognised by its `Paper D<n>:` title line, the target
//! by its question text. Answers follow fixed rules per model:
//!
//! * `alpha`: gold answers, except a wrong label for every categorical
//!   target of `d1` in zero-shot mode.
//! * `beta`, zero-shot: categorical answers wrapped in a code fence, binary
//!   answers always `Yes.`, free-text answers cut to their first three
//!   words.
//! * `beta`, few-shot: gold answers, except prose without JSON for `d6`.
//! * any other model: gold answers.
//!
//! The context is always the document line that states the answer.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use crate::{MockReply, MockRequest};

#[derive(Deserialize)]
struct Gold {
    doc_id: String,
    target_id: String,
    gold_answer: String,
}

#[derive(Deserialize)]
struct Target {
    target_id: String,
    question: String,
    kind: String,
    #[serde(default)]
    label_vocabulary: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct Set {
    targets: Vec<Target>,
}

pub struct Scenario {
    targets: Vec<Target>,
    gold: HashMap<(String, String), String>,
    lines: HashMap<String, Vec<String>>,
}

impl Scenario {
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let invalid = |e: serde_json::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let set: Set = serde_json::from_str(&std::fs::read_to_string(dir.join("question_set.json"))?).map_err(invalid)?;
        let mut gold = HashMap::new();
        for line in std::fs::read_to_string(dir.join("gold.jsonl"))?.lines().filter(|l| !l.trim().is_empty()) {
            let g: Gold = serde_json::from_str(line).map_err(invalid)?;
            gold.insert((g.doc_id, g.target_id), g.gold_answer);
        }
        let mut lines = HashMap::new();
        for entry in std::fs::read_dir(dir.join("docs"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                let id = path.file_stem().unwrap().to_string_lossy().into_owned();
                let text = std::fs::read_to_string(&path)?;
                lines.insert(id, text.lines().map(str::to_string).collect());
            }
        }
        Ok(Scenario {
            targets: set.targets,
            gold,
            lines,
        })
    }

    pub fn reply(&self, req: &MockRequest) -> MockReply {
        let user = req.last_user();
        let shots = req.messages.len().saturating_sub(1) / 2;
        let Some(doc) = (1..=99).map(|n| format!("d{n}")).find(|d| user.contains(&format!("Paper D{}:", &d[1..]))) else {
            return MockReply::content("I could not find a paper in the prompt.");
        };
        let Some((index, target)) = self.targets.iter().enumerate().find(|(_, t)| user.contains(&t.question)) else {
            return MockReply::content("I do not understand the question.");
        };
        let gold = self
            .gold
            .get(&(doc.clone(), target.target_id.clone()))
            .cloned()
            .unwrap_or_default();
        let context = self
            .lines
            .get(&doc)
            .and_then(|l| l.get(index + 1))
            .cloned()
            .unwrap_or_default();
        let body = |answer: &str| {
            json!({"reasoning": "The relevant sentence states it.", "context": context, "answer": answer}).to_string()
        };
        let text = match (req.model.as_str(), shots) {
            ("alpha", 0) if doc == "d1" && target.kind == "categorical" => {
                let vocab = target.label_vocabulary.clone().unwrap_or_default();
                let pos = vocab.iter().position(|v| *v == gold).unwrap_or(0);
                body(&vocab[(pos + 1) % vocab.len().max(1)])
            }
            ("beta", 0) => match target.kind.as_str() {
                "categorical" => format!("Here is the result:\n```json\n{}\n```", body(&gold)),
                "binary" => body("Yes."),
                _ => body(&gold.split_whitespace().take(3).collect::<Vec<_>>().join(" ")),
            },
            ("beta", _) if doc == "d6" => "I cannot answer this question.".to_string(),
            _ => body(&gold),
        };
        MockReply::content(&text)
    }
}
