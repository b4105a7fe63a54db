//! Persisted job and benchmark records and the worker pool that runs them.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use crossbeam_channel::{Receiver, Sender, TrySendError};
use paperq_core::config::Config;
use paperq_core::evaluation::{emit_report, EmbeddingProvider, GoldAnnotation, MetricReport, ReportFormat};
use paperq_core::ingest::SourceDocument;
use paperq_core::llm_client::{run_bounded, ModelEndpoint};
use paperq_core::pipeline::{run_matrix, DocumentSource, Extractor};
use paperq_core::records::ExtractionRecord;
use paperq_core::registry::{ExtractionTarget, Registry};
use serde::{Deserialize, Serialize};

use crate::error::ErrorBody;
use crate::store::Store;

pub const JOBS: &str = "jobs";
pub const BENCHMARKS: &str = "benchmarks";
pub const COMPLETIONS: &str = "completions";
pub const DOCUMENTS: &str = "documents";
pub const GOLD: &str = "gold";
pub const QUESTION_SETS: &str = "question_sets";

/// Capacity of the work queue shared by jobs and benchmarks.
pub const QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Queued,
    Running,
    Done,
    Failed,
}

impl Status {
    /// Allowed moves: queued to running or failed, running to done or failed.
    pub fn can_advance_to(self, next: Status) -> bool {
        matches!(
            (self, next),
            (Status::Queued, Status::Running)
                | (Status::Queued, Status::Failed)
                | (Status::Running, Status::Done)
                | (Status::Running, Status::Failed)
        )
    }

    pub fn rank(self) -> u8 {
        match self {
            Status::Queued => 0,
            Status::Running => 1,
            Status::Done | Status::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionJob {
    pub job_id: String,
    pub doc_id: String,
    pub set_id: Option<String>,
    pub version: Option<u32>,
    pub target_ids: Vec<String>,
    pub custom_question: Option<String>,
    pub endpoint_name: String,
    pub shot_mode: usize,
    pub status: Status,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    /// One entry per finished target, keyed by target id.
    pub results: BTreeMap<String, ExtractionRecord>,
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldFile {
    pub gold_file_id: String,
    pub filename: Option<String>,
    pub created_at: DateTime<Utc>,
    pub annotations: Vec<GoldAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub benchmark_id: String,
    pub gold_file_ref: String,
    pub set_id: String,
    pub version: u32,
    pub endpoints: Vec<String>,
    pub shot_modes: Vec<usize>,
    pub status: Status,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Endpoint-major, then shot mode in request order.
    pub reports: Vec<MetricReport>,
    pub table_markdown: Option<String>,
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Job(String),
    Benchmark(String),
}

/// Ingested documents held in memory, mirrored in the store.
#[derive(Debug, Default)]
pub struct DocMap(RwLock<HashMap<String, Arc<SourceDocument>>>);

impl DocMap {
    pub fn insert(&self, doc: Arc<SourceDocument>) {
        self.0.write().expect("document map poisoned").insert(doc.doc_id.clone(), doc);
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.0.read().expect("document map poisoned").contains_key(doc_id)
    }
}

impl DocumentSource for DocMap {
    fn document(&self, doc_id: &str) -> Option<Arc<SourceDocument>> {
        self.0.read().expect("document map poisoned").get(doc_id).cloned()
    }
}

/// State shared by request handlers and workers.
pub struct Core {
    pub config: Config,
    pub store: Store,
    pub registry: Registry,
    pub docs: DocMap,
    pub extractor: Extractor,
    pub provider: Box<dyn EmbeddingProvider>,
}

fn failure(code: &str, message: impl Into<String>) -> ErrorBody {
    ErrorBody {
        code: code.to_string(),
        message: message.into(),
    }
}

impl Core {
    fn save_job(&self, job: &ExtractionJob) {
        if let Err(e) = self.store.put(JOBS, &job.job_id, job) {
            tracing::error!(job_id = %job.job_id, error = %e, "cannot persist job");
        }
    }

    fn save_benchmark(&self, bench: &Benchmark) {
        if let Err(e) = self.store.put(BENCHMARKS, &bench.benchmark_id, bench) {
            tracing::error!(benchmark_id = %bench.benchmark_id, error = %e, "cannot persist benchmark");
        }
    }

    pub fn run(&self, task: &Task) {
        let outcome = catch_unwind(AssertUnwindSafe(|| match task {
            Task::Job(id) => self.run_job(id),
            Task::Benchmark(id) => self.run_benchmark(id),
        }));
        if outcome.is_err() {
            tracing::error!(?task, "task panicked");
            self.fail(task, failure("INTERNAL", "task aborted unexpectedly"));
        }
    }

    /// Marks a queued or running task failed; finished tasks are left alone.
    pub fn fail(&self, task: &Task, error: ErrorBody) {
        match task {
            Task::Job(id) => {
                if let Some(mut job) = self.store.get::<ExtractionJob>(JOBS, id) {
                    if job.status.can_advance_to(Status::Failed) {
                        job.status = Status::Failed;
                        job.finished_at = Some(Utc::now());
                        job.error = Some(error);
                        self.save_job(&job);
                    }
                }
            }
            Task::Benchmark(id) => {
                if let Some(mut bench) = self.store.get::<Benchmark>(BENCHMARKS, id) {
                    if bench.status.can_advance_to(Status::Failed) {
                        bench.status = Status::Failed;
                        bench.finished_at = Some(Utc::now());
                        bench.error = Some(error);
                        self.save_benchmark(&bench);
                    }
                }
            }
        }
    }

    fn job_targets(&self, job: &ExtractionJob) -> Result<Vec<ExtractionTarget>, ErrorBody> {
        if let Some(q) = &job.custom_question {
            return Ok(vec![ExtractionTarget::custom(q.clone())]);
        }
        let set_id = job.set_id.as_deref().unwrap_or_default();
        job.target_ids
            .iter()
            .map(|t| {
                self.registry
                    .get_target(set_id, t, job.version)
                    .map_err(|e| failure(e.code(), e.to_string()))
            })
            .collect()
    }

    fn endpoint(&self, name: &str) -> Result<&ModelEndpoint, ErrorBody> {
        self.config
            .endpoint(name)
            .ok_or_else(|| failure("UNKNOWN_ENDPOINT", format!("endpoint {name:?} is not configured")))
    }

    fn run_job(&self, job_id: &str) {
        let Some(mut job) = self.store.get::<ExtractionJob>(JOBS, job_id) else {
            tracing::warn!(job_id, "queued job has no record");
            return;
        };
        if job.status != Status::Queued {
            return;
        }
        job.status = Status::Running;
        job.started_at = Some(Utc::now());
        self.save_job(&job);

        let prepared = (|| {
            let targets = self.job_targets(&job)?;
            let doc = self
                .docs
                .document(&job.doc_id)
                .ok_or_else(|| failure("DOCUMENT_NOT_FOUND", format!("document {:?} not found", job.doc_id)))?;
            let endpoint = self.endpoint(&job.endpoint_name)?;
            Ok((targets, doc, endpoint))
        })();
        let (targets, doc, endpoint) = match prepared {
            Ok(p) => p,
            Err(error) => return self.fail(&Task::Job(job_id.to_string()), error),
        };

        let shot_mode = job.shot_mode;
        let job = Mutex::new(job);
        run_bounded(&targets, self.config.parallelism, |target| {
            let extraction = self.extractor.extract_one(endpoint, target, &doc, shot_mode, &self.docs);
            if let Some(c) = &extraction.completion {
                if let Err(e) = self.store.put(COMPLETIONS, &c.request_id, c) {
                    tracing::error!(request_id = %c.request_id, error = %e, "cannot persist completion");
                }
            }
            let mut job = job.lock().expect("job lock poisoned");
            job.results.insert(target.target_id.clone(), extraction.record);
            self.save_job(&job);
        });
        let mut job = job.into_inner().expect("job lock poisoned");
        job.status = Status::Done;
        job.finished_at = Some(Utc::now());
        self.save_job(&job);
    }

    fn run_benchmark(&self, benchmark_id: &str) {
        let Some(mut bench) = self.store.get::<Benchmark>(BENCHMARKS, benchmark_id) else {
            tracing::warn!(benchmark_id, "queued benchmark has no record");
            return;
        };
        if bench.status != Status::Queued {
            return;
        }
        bench.status = Status::Running;
        bench.started_at = Some(Utc::now());
        self.save_benchmark(&bench);

        let outcome = (|| {
            let gold = self
                .store
                .get::<GoldFile>(GOLD, &bench.gold_file_ref)
                .ok_or_else(|| failure("GOLD_FILE_NOT_FOUND", format!("gold file {:?} not found", bench.gold_file_ref)))?;
            let set = self
                .registry
                .get_set(&bench.set_id, Some(bench.version))
                .map_err(|e| failure(e.code(), e.to_string()))?;
            let endpoints = bench
                .endpoints
                .iter()
                .map(|n| self.endpoint(n).cloned())
                .collect::<Result<Vec<_>, _>>()?;
            let cells = run_matrix(
                &self.extractor,
                &set,
                &gold.annotations,
                &self.docs,
                &endpoints,
                &bench.shot_modes,
                self.config.parallelism,
                self.provider.as_ref(),
            )
            .map_err(|e| failure("BENCHMARK_FAILED", e.to_string()))?;
            let reports: Vec<MetricReport> = cells.into_iter().map(|c| c.report).collect();
            let table = emit_report(&reports, ReportFormat::Markdown).map_err(|e| failure("BENCHMARK_FAILED", e.to_string()))?;
            Ok((reports, table))
        })();
        match outcome {
            Ok((reports, table)) => {
                bench.reports = reports;
                bench.table_markdown = Some(table);
                bench.status = Status::Done;
                bench.finished_at = Some(Utc::now());
                self.save_benchmark(&bench);
            }
            Err(error) => self.fail(&Task::Benchmark(benchmark_id.to_string()), error),
        }
    }

    /// Re-queues tasks left queued by a previous process and fails the ones
    /// it left running.
    pub fn recover(&self, queue: &Sender<Task>) {
        let mut jobs: Vec<ExtractionJob> = self.store.list(JOBS);
        jobs.sort_by_key(|j| j.created_at);
        let mut benches: Vec<Benchmark> = self.store.list(BENCHMARKS);
        benches.sort_by_key(|b| b.created_at);
        let pending = jobs
            .into_iter()
            .map(|j| (Task::Job(j.job_id), j.status))
            .chain(benches.into_iter().map(|b| (Task::Benchmark(b.benchmark_id), b.status)));
        for (task, status) in pending {
            match status {
                Status::Running => self.fail(&task, failure("INTERRUPTED", "service restarted while the task was running")),
                Status::Queued => {
                    if let Err(TrySendError::Full(task) | TrySendError::Disconnected(task)) = queue.try_send(task) {
                        self.fail(&task, failure("QUEUE_FULL", "work queue full at startup"));
                    }
                }
                Status::Done | Status::Failed => {}
            }
        }
    }
}

/// Starts `n` worker threads draining `queue`. They exit once every sender
/// is dropped.
pub fn start_workers(core: &Arc<Core>, queue: Receiver<Task>, n: usize) -> std::io::Result<()> {
    for i in 0..n {
        let core = Arc::clone(core);
        let queue = queue.clone();
        std::thread::Builder::new().name(format!("paperq-worker-{i}")).spawn(move || {
            while let Ok(task) = queue.recv() {
                core.run(&task);
            }
        })?;
    }
    Ok(())
}
