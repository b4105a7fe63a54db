use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use paperq_core::cache::ResponseCache;
use paperq_core::config::Config;
use paperq_core::evaluation::{emit_report, parse_gold_jsonl, run_benchmark, MetricReport, ReportFormat};
use paperq_core::ingest::{ingest_bytes, SourceDocument};
use paperq_core::llm_client::{run_bounded, LlmClient, ModelEndpoint};
use paperq_core::pipeline::{run_matrix, Extractor};
use paperq_core::records::ExtractionRecord;
use paperq_core::registry::{load_question_set, ExtractionTarget, QuestionSet};

pub enum Outcome {
    Complete,
    Partial(usize),
}

type CmdResult = Result<Outcome, String>;

pub fn load_config(path: Option<&Path>) -> Result<Config, String> {
    match path {
        Some(p) => Config::load(p).map_err(|e| e.to_string()),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env(|k| std::env::var(k).ok()).map_err(|e| e.to_string())?;
            Ok(cfg)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_set(path: &Path) -> Result<QuestionSet, String> {
    load_question_set(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn doc_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_doc(path: &Path) -> Result<Arc<SourceDocument>, String> {
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    ingest_bytes(&bytes, &doc_id_of(path))
        .map(|d| Arc::new(d.with_filename(name)))
        .map_err(|e| format!("{}: {} ({e})", path.display(), e.code()))
}

/// Every `.txt` and `.pdf` file in `dir`, keyed by file stem.
fn load_docs(dir: &Path) -> Result<HashMap<String, Arc<SourceDocument>>, String> {
    let mut docs = HashMap::new();
    let entries = fs::read_dir(dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("txt") | Some("pdf")) {
            let id = doc_id_of(&path);
            if docs.insert(id.clone(), load_doc(&path)?).is_some() {
                return Err(format!("{}: more than one document with id {id:?}", dir.display()));
            }
        }
    }
    Ok(docs)
}

fn endpoint<'a>(config: &'a Config, name: &str) -> Result<&'a ModelEndpoint, String> {
    config.endpoint(name).ok_or_else(|| {
        let known: Vec<&str> = config.endpoints.iter().map(|e| e.name.as_str()).collect();
        format!("endpoint {name:?} is not configured (known: {})", known.join(", "))
    })
}

fn extractor(config: &Config, cache: Option<&Path>) -> Result<Extractor, String> {
    let client = LlmClient::new().with_retry(config.retry_policy());
    let mut ex = Extractor::new(client).with_alignment(config.align_config());
    if let Some(dir) = cache {
        ex = ex.with_cache(ResponseCache::open(dir).map_err(|e| format!("cannot open cache {}: {e}", dir.display()))?);
    }
    Ok(ex)
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn jsonl(records: &[ExtractionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn report_json(report: &MetricReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn file_label(model: &str, shot_mode: usize) -> String {
    let safe: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{safe}_{shot_mode}shot")
}

#[derive(Args)]
pub struct ExtractArgs {
    /// PDF or plain-text document.
    #[arg(long)]
    doc: PathBuf,
    #[arg(long)]
    question_set: Option<PathBuf>,
    /// Comma-separated target ids; all targets when omitted.
    #[arg(long)]
    targets: Option<String>,
    /// Ask a custom free-text question instead of question-set targets.
    #[arg(long)]
    question: Option<String>,
    #[arg(long, default_value_t = 0)]
    shots: usize,
    #[arg(long)]
    endpoint: String,
    /// Directory holding few-shot example documents; defaults to the
    /// directory of `--doc`.
    #[arg(long)]
    examples: Option<PathBuf>,
    /// JSON-lines output; `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
}

pub fn extract(config: &Config, args: ExtractArgs) -> CmdResult {
    let endpoint = endpoint(config, &args.endpoint)?;
    let targets: Vec<ExtractionTarget> = match (&args.question, &args.question_set) {
        (Some(_), _) if args.shots > 0 => return Err("--question only supports --shots 0".into()),
        (Some(q), _) => vec![ExtractionTarget::custom(q.clone())],
        (None, None) => return Err("either --question-set or --question is required".into()),
        (None, Some(path)) => {
            let set = load_set(path)?;
            match &args.targets {
                None => set.targets.clone(),
                Some(list) => split_list(list)
                    .iter()
                    .map(|id| {
                        set.target(id)
                            .cloned()
                            .ok_or_else(|| format!("unknown target {id:?} in question set {:?}", set.set_id))
                    })
                    .collect::<Result<_, _>>()?,
            }
        }
    };
    for t in &targets {
        if t.examples.len() < args.shots {
            return Err(format!(
                "target {:?} has {} example(s), {} requested",
                t.target_id,
                t.examples.len(),
                args.shots
            ));
        }
    }
    let doc = load_doc(&args.doc)?;
    let mut docs = if args.shots > 0 {
        let dir = args
            .examples
            .clone()
            .or_else(|| args.doc.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        load_docs(&dir)?
    } else {
        HashMap::new()
    };
    for t in &targets {
        for ex in t.examples.iter().take(args.shots) {
            if !docs.contains_key(&ex.document_ref) {
                return Err(format!(
                    "target {:?}: example document {:?} not found",
                    t.target_id, ex.document_ref
                ));
            }
        }
    }
    docs.insert(doc.doc_id.clone(), doc.clone());

    let ex = extractor(config, args.cache.as_deref().or(config.cache_dir.as_deref()))?;
    let records: Vec<ExtractionRecord> = run_bounded(&targets, config.parallelism, |t| {
        ex.extract_one(endpoint, t, &doc, args.shots, &docs).record
    });
    let out = jsonl(&records);
    if args.out.as_os_str() == "-" {
        std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| format!("cannot write output: {e}"))?;
    } else {
        write(&args.out, &out)?;
    }
    let failed = records.iter().filter(|r| !r.is_success()).count();
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::Partial(failed) })
}

#[derive(Args)]
pub struct BenchArgs {
    /// Gold annotations, one JSON object per line.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    question_set: PathBuf,
    /// Directory of documents named `<doc_id>.txt` or `<doc_id>.pdf`.
    #[arg(long)]
    docs: PathBuf,
    /// Comma-separated endpoint names.
    #[arg(long)]
    endpoints: String,
    /// Comma-separated shot counts.
    #[arg(long, default_value = "0")]
    shots: String,
    #[arg(long)]
    out: PathBuf,
    /// Response cache; defaults to the configured cache or `<out>/cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
}

pub fn bench(config: &Config, args: BenchArgs) -> CmdResult {
    let gold = parse_gold_jsonl(&read(&args.gold)?).map_err(|e| format!("{}: {e}", args.gold.display()))?;
    let set = load_set(&args.question_set)?;
    let docs = load_docs(&args.docs)?;
    set.check_example_refs(|r| docs.contains_key(r))
        .map_err(|e| format!("{}: {e}", args.question_set.display()))?;
    let endpoints: Vec<ModelEndpoint> = split_list(&args.endpoints)
        .iter()
        .map(|n| endpoint(config, n).cloned())
        .collect::<Result<_, _>>()?;
    let shots: Vec<usize> = split_list(&args.shots)
        .iter()
        .map(|s| s.parse().map_err(|_| format!("invalid shot count {s:?}")))
        .collect::<Result<_, _>>()?;
    let cache = args
        .cache
        .clone()
        .or_else(|| config.cache_dir.clone())
        .unwrap_or_else(|| args.out.join("cache"));
    let ex = extractor(config, Some(&cache))?;
    let provider = config.embedding_provider().map_err(|e| e.to_string())?;

    let cells = run_matrix(&ex, &set, &gold, &docs, &endpoints, &shots, config.parallelism, provider.as_ref())
        .map_err(|e| e.to_string())?;

    let mut reports = Vec::new();
    let mut request_failures = 0;
    for cell in &cells {
        let label = file_label(&cell.endpoint, cell.shot_mode);
        write(&args.out.join(format!("report_{label}.json")), &report_json(&cell.report))?;
        write(&args.out.join(format!("results_{label}.jsonl")), &jsonl(&cell.records))?;
        request_failures += cell
            .records
            .iter()
            .filter(|r| r.error.as_ref().is_some_and(|e| !is_parse_error(&e.code)))
            .count();
        reports.push(cell.report.clone());
    }
    let table = emit_report(&reports, ReportFormat::Markdown).map_err(|e| e.to_string())?;
    write(&args.out.join("table.md"), &table)?;
    write(
        &args.out.join("table.csv"),
        &emit_report(&reports, ReportFormat::Csv).map_err(|e| e.to_string())?,
    )?;
    print!("{table}");
    eprintln!("requests sent: {}", ex.network_calls());
    Ok(if request_failures == 0 { Outcome::Complete } else { Outcome::Partial(request_failures) })
}

fn is_parse_error(code: &str) -> bool {
    matches!(code, "NoJsonFound" | "MissingKeys" | "UnrecoverableJson")
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Extraction records of one model and shot mode, one per line.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

pub fn score(config: &Config, args: ScoreArgs) -> CmdResult {
    let gold = parse_gold_jsonl(&read(&args.gold)?).map_err(|e| format!("{}: {e}", args.gold.display()))?;
    let mut records = Vec::new();
    for (i, line) in read(&args.results)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExtractionRecord = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", args.results.display(), i + 1))?;
        records.push(record);
    }
    let Some(first) = records.first() else {
        return Err(format!("{}: no records", args.results.display()));
    };
    let (model, shot_mode) = (first.model.clone(), first.shot_mode);
    if let Some(other) = records.iter().find(|r| r.model != model || r.shot_mode != shot_mode) {
        return Err(format!(
            "{}: records mix {} and {}; score one model and shot mode at a time",
            args.results.display(),
            file_label(&model, shot_mode),
            file_label(&other.model, other.shot_mode)
        ));
    }
    let provider = config.embedding_provider().map_err(|e| e.to_string())?;
    let report = run_benchmark(&gold, &records, provider.as_ref(), &model, shot_mode).map_err(|e| e.to_string())?;
    let rendered = match args.format {
        ReportFormat::Json => report_json(&report),
        other => emit_report(std::slice::from_ref(&report), other).map_err(|e| e.to_string())?,
    };
    write(&args.out, &rendered)?;
    Ok(Outcome::Complete)
}
