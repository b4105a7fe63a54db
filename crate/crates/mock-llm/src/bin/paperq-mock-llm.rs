//! Standalone mock LLM server.
//!
//! Usage: `paperq-mock-llm [ADDR] [RESPONSES.json | FIXTURE_DIR]`
//!
//! Without a second argument every request is echoed back. A directory
//! serves the benchmark fixture scenario. A responses file is a JSON object
//! mapping substrings to assistant content; the first key found in the last
//! user message wins, otherwise the `"*"` entry is used.

use std::sync::Arc;

use paperq_mock_llm::{MockLlm, MockReply};

fn main() {
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:8089".into());
    let source = args.next();
    if let Some(dir) = source.as_deref().filter(|p| std::path::Path::new(p).is_dir()) {
        let scenario = paperq_mock_llm::scenario::Scenario::load(std::path::Path::new(dir)).unwrap_or_else(|e| {
            eprintln!("cannot load fixture {dir}: {e}");
            std::process::exit(1)
        });
        serve(&addr, Arc::new(move |req| scenario.reply(req)));
    }
    let responses: Option<Vec<(String, String)>> = source.map(|path| {
        let raw = std::fs::read_to_string(&path).unwrap_or_else(|e| {
            eprintln!("cannot read {path}: {e}");
            std::process::exit(1)
        });
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&raw).unwrap_or_else(|e| {
            eprintln!("invalid responses file {path}: {e}");
            std::process::exit(1)
        });
        map.into_iter()
            .map(|(k, v)| (k, v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
            .collect()
    });
    serve(
        &addr,
        Arc::new(move |req| match &responses {
            None => MockReply::content(req.last_user()),
            Some(table) => {
                let user = req.last_user();
                let hit = table
                    .iter()
                    .find(|(k, _)| k != "*" && user.contains(k.as_str()))
                    .or_else(|| table.iter().find(|(k, _)| k == "*"));
                match hit {
                    Some((_, content)) => MockReply::content(content),
                    None => MockReply::status(404, r#"{"error":{"message":"no canned response"}}"#),
                }
            }
        }),
    );
}

fn serve(addr: &str, responder: paperq_mock_llm::Responder) -> ! {
    let parsed = addr.parse().unwrap_or_else(|e| {
        eprintln!("invalid address {addr}: {e}");
        std::process::exit(1)
    });
    let server = MockLlm::start_on(parsed, responder).unwrap_or_else(|e| {
        eprintln!("cannot bind: {e}");
        std::process::exit(1)
    });
    println!("mock LLM listening on {}", server.url());
    loop {
        std::thread::park();
    }
}
