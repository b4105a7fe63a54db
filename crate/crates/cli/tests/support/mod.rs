#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paperq_mock_llm::scenario::Scenario;
use paperq_mock_llm::MockLlm;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn bench_dir() -> PathBuf {
    fixtures().join("bench")
}

pub fn scenario_server() -> MockLlm {
    let scenario = Scenario::load(&bench_dir()).expect("fixture loads");
    MockLlm::start(move |req| scenario.reply(req))
}

/// Writes a config with one endpoint per name, all served by `url`.
pub fn write_config(dir: &Path, url: &str, names: &[&str]) -> PathBuf {
    let mut toml = String::from("parallelism = 8\n\n[retry]\nbase_ms = 1\ncap_ms = 5\n");
    for name in names {
        toml.push_str(&format!(
            "\n[[endpoints]]\nname = \"{name}\"\nbase_url = \"{url}\"\nmax_context = 200000\nmax_retries = 0\n"
        ));
    }
    let path = dir.join("paperq.toml");
    std::fs::write(&path, toml).unwrap();
    path
}

pub fn paperq(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paperq"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("PAPERQ_CONFIG")
        .env_remove("PAPERQ_CACHE_DIR")
        .output()
        .expect("paperq runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
