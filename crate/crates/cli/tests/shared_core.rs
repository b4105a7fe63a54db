mod support;

use std::time::{Duration, Instant};

use paperq_core::config::Config;
use paperq_core::evaluation::MetricReport;
use paperq_service::{BackgroundServer, Service};
use serde_json::{json, Value};
use support::{bench_dir, p, paperq, scenario_server, stderr, write_config};

#[test]
fn cli_bench_reproduces_service_reports_from_shared_cache() {
    let llm = scenario_server();
    let tmp = tempfile::tempdir().unwrap();
    let config_path = write_config(tmp.path(), &llm.url(), &["alpha", "beta"]);
    let data_dir = tmp.path().join("data");
    let mut config = Config::load(&config_path).unwrap();
    config.data_dir = data_dir.clone();
    config.seed_documents = Some(bench_dir().join("docs"));
    config.question_sets = vec![bench_dir().join("question_set.json")];
    let server = BackgroundServer::start(Service::new(config, "t").unwrap(), "127.0.0.1:0".parse().unwrap()).unwrap();

    let http = reqwest::blocking::Client::new();
    let gold = std::fs::read_to_string(bench_dir().join("gold.jsonl")).unwrap();
    let resp: Value = http
        .post(format!("{}/gold-files", server.url()))
        .bearer_auth("t")
        .body(gold)
        .send()
        .unwrap()
        .json()
        .unwrap();
    let gold_ref = resp["gold_file_id"].as_str().unwrap();
    let resp: Value = http
        .post(format!("{}/benchmarks", server.url()))
        .bearer_auth("t")
        .json(&json!({"gold_file_ref": gold_ref, "set_id": "bpm-demo", "endpoints": ["alpha", "beta"], "shot_modes": [0, 3]}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let url = format!("{}/benchmarks/{}", server.url(), resp["benchmark_id"].as_str().unwrap());
    let deadline = Instant::now() + Duration::from_secs(120);
    let bench = loop {
        let body: Value = http.get(&url).bearer_auth("t").send().unwrap().json().unwrap();
        if body["status"] == "done" || body["status"] == "failed" {
            break body;
        }
        assert!(Instant::now() < deadline, "benchmark did not finish");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(bench["status"], "done", "{bench}");
    let service_reports: Vec<MetricReport> = serde_json::from_value(bench["reports"].clone()).unwrap();
    let calls = llm.request_count();

    let out = tmp.path().join("out");
    let cli = paperq(
        &config_path,
        &[
            "bench",
            "--gold",
            p(&bench_dir().join("gold.jsonl")),
            "--question-set",
            p(&bench_dir().join("question_set.json")),
            "--docs",
            p(&bench_dir().join("docs")),
            "--endpoints",
            "alpha,beta",
            "--shots",
            "0,3",
            "--out",
            p(&out),
            "--cache",
            p(&data_dir.join("cache")),
        ],
    );
    assert!(matches!(cli.status.code(), Some(0) | Some(2)), "{}", stderr(&cli));
    assert_eq!(llm.request_count(), calls, "CLI run missed the shared cache");
    assert_eq!(service_reports.len(), 4);
    for report in &service_reports {
        let file = out.join(format!("report_{}_{}shot.json", report.model, report.shot_mode));
        let written = std::fs::read_to_string(&file).unwrap();
        assert_eq!(written, serde_json::to_string_pretty(report).unwrap() + "\n", "{}", report.label());
    }
}
