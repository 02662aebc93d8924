//! Experiment orchestration: plans, job expansion, resumable execution,
//! benchmark self-validation, and transcript replay.
//!
//! A plan (TOML) names models, target languages, prompting strategies and a
//! task filter. [`expand`] turns it into a deterministic job list;  [`run`]
//! executes jobs on a thread pool, appending per-round outcome records and
//! full transcripts to an on-disk store that survives interruption: re-running
//! the same plan picks up where the last invocation stopped.

pub mod report;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{self, AlignedBenchmark, BenchError, LanguageId};
use crate::prompting::{
    extract_code, run_strategy, GenSettings, PromptError, Strategy, TemplateError, TemplateSet,
    Transcript,
};
use crate::providers::{
    CachingProvider, HttpProvider, Provider, ProviderEndpoint, ProviderError, RetryPolicy,
    ScriptedProvider, TranscriptCache,
};
use crate::sandbox::{assemble, ExecutionSpec, Sandbox, ToolchainReport, Verdict, VerdictStatus};
use crate::stats::{OutcomeRecord, RecordStatus};

pub use store::{completed_jobs, read_records, read_transcripts, JobKey, ResultsStore, StoreError};

pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Plan schema
// ---------------------------------------------------------------------------

/// Where the benchmark lives; the CLI may override the directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRef {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// One model under test, declared as a `[[models]]` entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// Replays canned responses from a JSON script file; no network.
    Scripted { id: String, script: PathBuf },
    /// Live chat-completions endpoint. The API key is read from the named
    /// environment variable, never from the plan.
    Http {
        id: String,
        base_url: String,
        #[serde(default)]
        api_key_env_var: Option<String>,
        #[serde(default = "default_model_concurrency")]
        concurrency: usize,
        #[serde(default = "default_model_timeout_s")]
        timeout_s: f64,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_model_concurrency() -> usize {
    4
}

fn default_model_timeout_s() -> f64 {
    120.0
}

impl ModelConfig {
    pub fn id(&self) -> &str {
        match self {
            ModelConfig::Scripted { id, .. } | ModelConfig::Http { id, .. } => id,
        }
    }
}

/// Everything needed to reproduce an experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub benchmark: BenchmarkRef,
    pub models: Vec<ModelConfig>,
    pub targets: Vec<LanguageId>,
    pub strategies: Vec<Strategy>,
    /// Task numbers to run; absent means every aligned task.
    #[serde(default)]
    pub tasks: Option<Vec<u32>>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Compile-plus-run budget per candidate, in seconds.
    #[serde(default = "default_exec_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub memory_limit_mb: Option<u64>,
    /// Passed through to providers that honor request seeds.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Directory of prompt template overrides; built-ins fill any gaps.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_parallelism() -> usize {
    4
}

fn default_exec_timeout_s() -> f64 {
    30.0
}

fn default_temperature() -> f64 {
    0.2
}

fn default_max_output_tokens() -> u32 {
    1024
}

impl ExperimentPlan {
    pub fn gen_settings(&self) -> GenSettings {
        GenSettings {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            random_seed: self.seed,
        }
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn memory_limit_bytes(&self) -> Option<u64> {
        self.memory_limit_mb.map(|mb| mb * 1024 * 1024)
    }

    pub fn templates(&self, plan_dir: &Path) -> Result<TemplateSet, TemplateError> {
        match &self.template_dir {
            Some(dir) => TemplateSet::from_dir(&resolve_relative(plan_dir, dir)),
            None => Ok(TemplateSet::builtin()),
        }
    }
}

/// Interpret a possibly-relative plan path against the plan file's directory.
fn resolve_relative(plan_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        plan_dir.join(path)
    }
}

/// Fingerprint of a plan's canonical JSON form, as eight hex characters.
pub fn plan_digest(plan: &ExperimentPlan) -> String {
    let canonical = serde_json::to_vec(plan).expect("plan serializes");
    let digest = Sha256::digest(&canonical);
    hex::encode(&digest[..4])
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::PlanFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| RunError::PlanFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid plan: {reason}")]
    PlanInvalid { reason: String },
    #[error("plan file {path}: {reason}")]
    PlanFile { path: PathBuf, reason: String },
    #[error("no benchmark directory: set benchmark.dir in the plan or pass --bench-dir")]
    NoBenchmarkDir,
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("run directory {run_dir} was produced by a different plan (digest {found}, expected {expected})")]
    PlanChanged {
        run_dir: PathBuf,
        found: String,
        expected: String,
    },
    #[error("model {id}: {source}")]
    ProviderSetup {
        id: String,
        #[source]
        source: ProviderError,
    },
    #[error("model {id}: cannot read script {path}: {reason}")]
    ScriptFile {
        id: String,
        path: PathBuf,
        reason: String,
    },
    #[error("i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing manifest in {run_dir}; not a run directory?")]
    MissingManifest { run_dir: PathBuf },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

/// One schedulable unit: a (model, target, strategy, task) combination.
/// Repeat rounds all happen inside one job.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Job {
    pub model_id: String,
    pub target: LanguageId,
    pub strategy: Strategy,
    pub task_number: u32,
}

impl Job {
    pub fn key(&self) -> JobKey {
        JobKey {
            model_id: self.model_id.clone(),
            target: self.target,
            strategy: self.strategy,
            task_number: self.task_number,
        }
    }
}

/// Turn a plan into its full deterministic job list, or report the first
/// violation that makes the plan unrunnable.
pub fn expand(plan: &ExperimentPlan, bench: &AlignedBenchmark) -> Result<Vec<Job>, RunError> {
    let invalid = |reason: String| RunError::PlanInvalid { reason };

    if plan.models.is_empty() {
        return Err(invalid("plan lists no models".into()));
    }
    let mut seen_models = BTreeSet::new();
    for model in &plan.models {
        if model.id().trim().is_empty() {
            return Err(invalid("a model has an empty id".into()));
        }
        if !seen_models.insert(model.id().to_string()) {
            return Err(invalid(format!("duplicate model id `{}`", model.id())));
        }
    }
    if plan.targets.is_empty() {
        return Err(invalid("plan lists no target languages".into()));
    }
    let mut seen_targets = BTreeSet::new();
    for &target in &plan.targets {
        if !seen_targets.insert(target) {
            return Err(invalid(format!("duplicate target `{target}`")));
        }
    }
    if plan.strategies.is_empty() {
        return Err(invalid("plan lists no strategies".into()));
    }
    let mut seen_strategies = BTreeSet::new();
    for &strategy in &plan.strategies {
        if !seen_strategies.insert(strategy) {
            return Err(invalid(format!("duplicate strategy `{strategy}`")));
        }
    }
    if plan.parallelism == 0 {
        return Err(invalid("parallelism must be at least 1".into()));
    }
    if !(plan.timeout_s > 0.0) {
        return Err(invalid("timeout_s must be positive".into()));
    }

    let loaded: BTreeSet<LanguageId> = bench.languages().collect();
    for &target in &plan.targets {
        if !loaded.contains(&target) {
            return Err(invalid(format!(
                "target `{target}` is not among the loaded benchmark languages"
            )));
        }
    }
    for &strategy in &plan.strategies {
        for &target in &plan.targets {
            if let Err(e) = strategy.validate_for_target(target) {
                return Err(invalid(format!("strategy `{strategy}` with target `{target}`: {e}")));
            }
        }
        if let Strategy::GroundTruth(lang) = strategy {
            if !loaded.contains(&lang) {
                return Err(invalid(format!(
                    "strategy `{strategy}` needs benchmark language `{lang}`, which is not loaded"
                )));
            }
        }
    }

    let all_tasks: Vec<u32> = bench.task_numbers().collect();
    let tasks: Vec<u32> = match &plan.tasks {
        Some(filter) => {
            let available: BTreeSet<u32> = all_tasks.iter().copied().collect();
            for &n in filter {
                if !available.contains(&n) {
                    return Err(invalid(format!("task {n} is not in the benchmark")));
                }
            }
            let mut t: Vec<u32> = filter.clone();
            t.sort_unstable();
            t.dedup();
            t
        }
        None => all_tasks,
    };
    if tasks.is_empty() {
        return Err(invalid("task filter selects no tasks".into()));
    }

    let mut jobs = Vec::with_capacity(plan.models.len() * plan.targets.len() * plan.strategies.len() * tasks.len());
    for model in &plan.models {
        for &target in &plan.targets {
            for &strategy in &plan.strategies {
                for &task_number in &tasks {
                    jobs.push(Job {
                        model_id: model.id().to_string(),
                        target,
                        strategy,
                        task_number,
                    });
                }
            }
        }
    }
    jobs.sort();
    Ok(jobs)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Immutable description of a run, written before the first job executes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_utc: String,
    pub harness_version: String,
    pub plan_digest: String,
    pub plan: ExperimentPlan,
    pub template_digests: BTreeMap<String, String>,
    pub benchmark_digest: String,
    pub toolchains: ToolchainReport,
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, RunError> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(RunError::MissingManifest {
            run_dir: run_dir.to_path_buf(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(io_at(&path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, text).map_err(io_at(&tmp))?;
    let path = run_dir.join(MANIFEST_FILE);
    std::fs::rename(&tmp, &path).map_err(io_at(&path))?;
    Ok(())
}

/// Reuse the newest run directory created from this plan, or start a fresh
/// one named `<utc-timestamp>-<plan-digest>`.
fn find_or_create_run_dir(out_dir: &Path, digest: &str) -> Result<(PathBuf, bool), RunError> {
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let suffix = format!("-{digest}");
    let mut candidates: Vec<PathBuf> = std::fs::read_dir(out_dir)
        .map_err(io_at(out_dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(&suffix))
        })
        .collect();
    candidates.sort();
    if let Some(existing) = candidates.pop() {
        return Ok((existing, true));
    }
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let dir = out_dir.join(format!("{stamp}{suffix}"));
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    Ok((dir, false))
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

fn sanitize_for_path(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn build_provider(
    model: &ModelConfig,
    plan_dir: &Path,
    cache_root: Option<&Path>,
) -> Result<Arc<dyn Provider>, RunError> {
    let open_cache = |id: &str| -> Result<Option<TranscriptCache>, RunError> {
        match cache_root {
            Some(root) => {
                let dir = root.join(sanitize_for_path(id));
                TranscriptCache::open(&dir).map(Some).map_err(io_at(&dir))
            }
            None => Ok(None),
        }
    };
    match model {
        ModelConfig::Scripted { id, script } => {
            let path = resolve_relative(plan_dir, script);
            let text = std::fs::read_to_string(&path).map_err(|e| RunError::ScriptFile {
                id: id.clone(),
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let mut provider = ScriptedProvider::from_json(&text).map_err(|e| RunError::ScriptFile {
                id: id.clone(),
                path,
                reason: e.to_string(),
            })?;
            provider.model_id = id.clone();
            Ok(match open_cache(id)? {
                Some(cache) => Arc::new(CachingProvider::new(provider, cache)),
                None => Arc::new(provider),
            })
        }
        ModelConfig::Http {
            id,
            base_url,
            api_key_env_var,
            concurrency,
            timeout_s,
            retry,
        } => {
            let endpoint = ProviderEndpoint {
                base_url: base_url.clone(),
                model_id: id.clone(),
                api_key_env_var: api_key_env_var.clone(),
                concurrency: *concurrency,
                timeout_s: *timeout_s,
                retry: retry.clone(),
            };
            let provider = HttpProvider::new(endpoint).map_err(|source| RunError::ProviderSetup {
                id: id.clone(),
                source,
            })?;
            Ok(match open_cache(id)? {
                Some(cache) => Arc::new(CachingProvider::new(provider, cache)),
                None => Arc::new(provider),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Compiles and runs candidates, turning verdicts into outcome records.
struct Scorer<'a> {
    sandbox: &'a Sandbox,
    bench: &'a AlignedBenchmark,
    timeout: Duration,
    memory_limit_bytes: Option<u64>,
    artifacts_root: Option<PathBuf>,
}

impl Scorer<'_> {
    fn score_rounds(&self, key: &JobKey, rounds: &[(u32, String)]) -> Vec<OutcomeRecord> {
        let transcript_ref = key.transcript_ref();
        rounds
            .iter()
            .map(|(round, candidate)| {
                let verdict = self.verdict_for(key, *round, candidate);
                OutcomeRecord {
                    task_number: key.task_number,
                    model_id: key.model_id.clone(),
                    target: key.target,
                    strategy: key.strategy,
                    round: *round,
                    passed: verdict.status == VerdictStatus::Pass,
                    status: RecordStatus::from_verdict(verdict.status),
                    transcript_ref: transcript_ref.clone(),
                }
            })
            .collect()
    }

    fn verdict_for(&self, key: &JobKey, round: u32, candidate: &str) -> Verdict {
        let task = match self.bench.task(key.task_number, key.target) {
            Ok(t) => t,
            Err(e) => {
                return Verdict {
                    status: VerdictStatus::InfraError,
                    detail: e.to_string(),
                    duration_ms: 0,
                }
            }
        };
        let program = match assemble(task, candidate) {
            Ok(p) => p,
            Err(e) => {
                // Nothing runnable came back from the model: that is a
                // failed attempt, not harness trouble.
                return Verdict {
                    status: VerdictStatus::Fail,
                    detail: e.to_string(),
                    duration_ms: 0,
                }
            }
        };
        let mut spec = ExecutionSpec::single_file(key.target, program, self.timeout);
        spec.memory_limit_bytes = self.memory_limit_bytes;
        if let Some(root) = &self.artifacts_root {
            spec.keep_artifacts = Some(
                root.join(sanitize_for_path(&key.transcript_ref()))
                    .join(format!("round-{round}")),
            );
        }
        self.sandbox.execute(&spec)
    }
}

/// The candidate program(s) a transcript yields: one per repeat round, or a
/// single final candidate for every other strategy.
fn transcript_candidates(transcript: &Transcript) -> Vec<(u32, String)> {
    match transcript.strategy {
        Strategy::Repeat(_) => transcript
            .stages
            .iter()
            .filter(|s| s.response.is_some())
            .enumerate()
            .map(|(i, s)| (i as u32 + 1, s.extracted.clone()))
            .collect(),
        _ => vec![(1, transcript.final_code.clone())],
    }
}

fn skip_records(key: &JobKey, reason: &str) -> Vec<OutcomeRecord> {
    log::debug!("skipping {}: {reason}", key.transcript_ref());
    (1..=key.expected_rounds())
        .map(|round| OutcomeRecord {
            task_number: key.task_number,
            model_id: key.model_id.clone(),
            target: key.target,
            strategy: key.strategy,
            round,
            passed: false,
            status: RecordStatus::SkippedToolchain,
            transcript_ref: String::new(),
        })
        .collect()
}

fn error_records(key: &JobKey, status: RecordStatus) -> Vec<OutcomeRecord> {
    (1..=key.expected_rounds())
        .map(|round| OutcomeRecord {
            task_number: key.task_number,
            model_id: key.model_id.clone(),
            target: key.target,
            strategy: key.strategy,
            round,
            passed: false,
            status,
            transcript_ref: String::new(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Parent directory that holds run directories.
    pub out_dir: PathBuf,
    /// Overrides `benchmark.dir` from the plan.
    pub bench_dir: Option<PathBuf>,
    /// Root for provider response caches; absent disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Re-execute jobs even when their records are already present.
    pub force: bool,
    /// Copy each candidate's scratch directory into the run directory.
    pub keep_artifacts: bool,
    /// Stop after this many jobs have been executed or skipped; the run can
    /// be resumed later. Mainly for smoke tests and interruption drills.
    pub max_jobs: Option<usize>,
    /// Directory the plan file came from; relative paths resolve against it.
    pub plan_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub total_jobs: usize,
    /// Jobs whose records were already present and were not re-run.
    pub resumed: usize,
    /// Jobs executed this invocation (including toolchain skips).
    pub executed: usize,
    /// Executed jobs that were recorded as toolchain skips.
    pub skipped: usize,
    /// Jobs deliberately left for a later invocation by `max_jobs`.
    pub deferred: usize,
}

/// Load the plan's benchmark, honoring a CLI override of the directory.
pub fn load_benchmark(plan: &ExperimentPlan, opts_bench_dir: Option<&Path>, plan_dir: &Path) -> Result<AlignedBenchmark, RunError> {
    let dir = match (opts_bench_dir, &plan.benchmark.dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => resolve_relative(plan_dir, d),
        (None, None) => return Err(RunError::NoBenchmarkDir),
    };
    let suites = bench::load_dir(&dir)?;
    let aligned = if suites.len() == 1 {
        bench::single(suites.into_iter().next().expect("one suite"))
    } else {
        let (aligned, report) = bench::align(suites)?;
        for dropped in &report.dropped {
            log::warn!("benchmark alignment dropped task {dropped}");
        }
        aligned
    };
    Ok(aligned)
}

/// Execute a plan. Completed jobs found in the run directory are not re-run
/// unless `force` is set; everything the run needs to be audited later
/// (manifest, records, transcripts) lands under the returned directory.
pub fn run(plan: &ExperimentPlan, sandbox: &Sandbox, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let bench = load_benchmark(plan, opts.bench_dir.as_deref(), &opts.plan_dir)?;
    let jobs = expand(plan, &bench)?;
    let templates = plan.templates(&opts.plan_dir)?;
    let digest = plan_digest(plan);

    let needed_toolchains: Vec<LanguageId> = plan
        .targets
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let toolchains = sandbox.check_toolchains(&needed_toolchains);
    for probe in &toolchains.probes {
        if !probe.available {
            log::warn!(
                "toolchain for {} unavailable: {}",
                probe.language,
                probe.detail.as_deref().unwrap_or("unknown reason")
            );
        }
    }

    let (run_dir, resumed_dir) = find_or_create_run_dir(&opts.out_dir, &digest)?;
    let run_id = run_dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();

    if resumed_dir {
        let manifest = read_manifest(&run_dir)?;
        if manifest.plan_digest != digest {
            return Err(RunError::PlanChanged {
                run_dir,
                found: manifest.plan_digest,
                expected: digest,
            });
        }
        log::info!("resuming run {run_id}");
    } else {
        let manifest = RunManifest {
            run_id: run_id.clone(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            plan_digest: digest.clone(),
            plan: plan.clone(),
            template_digests: templates.digests(),
            benchmark_digest: bench.digest(),
            toolchains: toolchains.clone(),
        };
        write_manifest(&run_dir, &manifest)?;
    }

    let store = ResultsStore::open(&run_dir)?;
    let done: BTreeSet<JobKey> = if opts.force {
        BTreeSet::new()
    } else {
        completed_jobs(&read_records(&run_dir)?)
    };

    let mut providers: BTreeMap<String, Arc<dyn Provider>> = BTreeMap::new();
    for model in &plan.models {
        providers.insert(
            model.id().to_string(),
            build_provider(model, &opts.plan_dir, opts.cache_dir.as_deref())?,
        );
    }

    let pending: Vec<&Job> = jobs.iter().filter(|j| !done.contains(&j.key())).collect();
    let resumed = jobs.len() - pending.len();
    let take = opts.max_jobs.unwrap_or(pending.len()).min(pending.len());
    let deferred = pending.len() - take;
    let to_run = &pending[..take];

    let scorer = Scorer {
        sandbox,
        bench: &bench,
        timeout: plan.exec_timeout(),
        memory_limit_bytes: plan.memory_limit_bytes(),
        artifacts_root: opts.keep_artifacts.then(|| run_dir.join("artifacts")),
    };
    let settings = plan.gen_settings();

    let next = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let fatal: Mutex<Option<StoreError>> = Mutex::new(None);
    let abort = AtomicBool::new(false);
    let workers = plan.parallelism.min(to_run.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = to_run.get(i) else { break };
                    let key = job.key();
                    let result = run_one_job(
                        &key,
                        &providers,
                        &templates,
                        &bench,
                        &settings,
                        &toolchains,
                        &scorer,
                        &store,
                    );
                    match result {
                        Ok(was_skip) => {
                            if was_skip {
                                skipped.fetch_add(1, Ordering::SeqCst);
                            }
                            log::info!("[{}/{}] {}", i + 1, to_run.len(), key.transcript_ref());
                        }
                        Err(e) => {
                            *fatal.lock().unwrap() = Some(e);
                            abort.store(true, Ordering::SeqCst);
                            break;
                        }
                    }
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e.into());
    }
    let skipped = skipped.into_inner();
    Ok(RunOutcome {
        run_id,
        run_dir,
        total_jobs: jobs.len(),
        resumed,
        executed: take,
        skipped,
        deferred,
    })
}

/// Returns whether the job was recorded as a toolchain skip. Provider and
/// prompting trouble is folded into records; only store failures propagate.
#[allow(clippy::too_many_arguments)]
fn run_one_job(
    key: &JobKey,
    providers: &BTreeMap<String, Arc<dyn Provider>>,
    templates: &TemplateSet,
    bench: &AlignedBenchmark,
    settings: &GenSettings,
    toolchains: &ToolchainReport,
    scorer: &Scorer<'_>,
    store: &ResultsStore,
) -> Result<bool, StoreError> {
    if !toolchains.available(key.target) {
        let reason = toolchains
            .probe(key.target)
            .and_then(|p| p.detail.clone())
            .unwrap_or_else(|| "toolchain unavailable".into());
        store.append_records(&skip_records(key, &reason))?;
        return Ok(true);
    }
    let provider = providers
        .get(&key.model_id)
        .expect("provider built for every planned model");
    let records = match run_strategy(
        provider.as_ref(),
        templates,
        bench,
        key.task_number,
        key.target,
        key.strategy,
        settings,
    ) {
        Ok(transcript) => {
            store.append_transcript(&key.transcript_ref(), &transcript)?;
            scorer.score_rounds(key, &transcript_candidates(&transcript))
        }
        Err(PromptError::Extraction { stage, source }) => {
            // The model answered with nothing extractable; that counts
            // against the model, not the harness.
            log::warn!(
                "{}: no code extractable at stage {stage}: {source}",
                key.transcript_ref()
            );
            error_records(key, RecordStatus::Fail)
        }
        Err(e) => {
            log::error!("{}: {e}", key.transcript_ref());
            error_records(key, RecordStatus::InfraError)
        }
    };
    store.append_records(&records)?;
    Ok(false)
}

// ---------------------------------------------------------------------------
// Benchmark self-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TaskFailure {
    pub task_number: u32,
    pub status: VerdictStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LanguageValidation {
    pub language: LanguageId,
    /// Why this language was not exercised, when it was not.
    pub skipped: Option<String>,
    pub checked: usize,
    pub passed: usize,
    pub failures: Vec<TaskFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub languages: Vec<LanguageValidation>,
}

impl ValidationReport {
    /// True when every locally runnable language passed all checked tasks.
    pub fn clean(&self) -> bool {
        self.languages
            .iter()
            .all(|l| l.skipped.is_some() || (l.failures.is_empty() && l.checked == l.passed))
    }
}

/// Run every canonical solution through assembly and execution, per language.
/// Languages without a local toolchain are reported as skipped, not failed.
pub fn validate_benchmark(
    bench: &AlignedBenchmark,
    sandbox: &Sandbox,
    tasks: Option<&[u32]>,
    timeout: Duration,
) -> ValidationReport {
    let languages: Vec<LanguageId> = bench.languages().collect();
    let toolchains = sandbox.check_toolchains(&languages);
    let task_numbers: Vec<u32> = match tasks {
        Some(t) => t.to_vec(),
        None => bench.task_numbers().collect(),
    };
    let mut report = ValidationReport { languages: Vec::new() };
    for language in languages {
        if !toolchains.available(language) {
            let reason = toolchains
                .probe(language)
                .and_then(|p| p.detail.clone())
                .unwrap_or_else(|| "toolchain unavailable".into());
            report.languages.push(LanguageValidation {
                language,
                skipped: Some(reason),
                checked: 0,
                passed: 0,
                failures: Vec::new(),
            });
            continue;
        }
        let mut validation = LanguageValidation {
            language,
            skipped: None,
            checked: 0,
            passed: 0,
            failures: Vec::new(),
        };
        for &number in &task_numbers {
            let task = match bench.task(number, language) {
                Ok(t) => t,
                Err(e) => {
                    validation.checked += 1;
                    validation.failures.push(TaskFailure {
                        task_number: number,
                        status: VerdictStatus::InfraError,
                        detail: e.to_string(),
                    });
                    continue;
                }
            };
            let canonical = format!("{}{}", task.declaration, task.canonical_solution);
            validation.checked += 1;
            let verdict = match assemble(task, &canonical) {
                Ok(program) => {
                    sandbox.execute(&ExecutionSpec::single_file(language, program, timeout))
                }
                Err(e) => Verdict {
                    status: VerdictStatus::InfraError,
                    detail: e.to_string(),
                    duration_ms: 0,
                },
            };
            if verdict.status == VerdictStatus::Pass {
                validation.passed += 1;
            } else {
                validation.failures.push(TaskFailure {
                    task_number: number,
                    status: verdict.status,
                    detail: verdict.detail,
                });
            }
        }
        report.languages.push(validation);
    }
    report
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub replay_dir: PathBuf,
    pub jobs: usize,
    pub records: Vec<OutcomeRecord>,
}

/// Re-extract code from a run's stored transcripts and execute it again,
/// without any provider calls. Results land in `<run-dir>/replay/`; useful
/// after extraction or assembly changes, and as a determinism check.
pub fn replay(
    run_dir: &Path,
    bench: &AlignedBenchmark,
    sandbox: &Sandbox,
    keep_artifacts: bool,
) -> Result<ReplayOutcome, RunError> {
    let manifest = read_manifest(run_dir)?;
    let transcripts = read_transcripts(run_dir)?;
    let replay_dir = run_dir.join("replay");
    if replay_dir.exists() {
        std::fs::remove_dir_all(&replay_dir).map_err(io_at(&replay_dir))?;
    }
    let store = ResultsStore::open(&replay_dir)?;
    let scorer = Scorer {
        sandbox,
        bench,
        timeout: manifest.plan.exec_timeout(),
        memory_limit_bytes: manifest.plan.memory_limit_bytes(),
        artifacts_root: keep_artifacts.then(|| replay_dir.join("artifacts")),
    };
    let mut all_records = Vec::new();
    for (reference, transcript) in &transcripts {
        let key = JobKey {
            model_id: transcript.model_id.clone(),
            target: transcript.target,
            strategy: transcript.strategy,
            task_number: transcript.task_number,
        };
        let rounds = reextracted_candidates(transcript, bench);
        let records = scorer.score_rounds(&key, &rounds);
        store.append_records(&records)?;
        log::info!("replayed {reference}");
        all_records.extend(records);
    }
    Ok(ReplayOutcome {
        replay_dir,
        jobs: transcripts.len(),
        records: all_records,
    })
}

/// Run extraction afresh over the stored raw responses. An unextractable
/// response becomes an empty candidate, which scores as a failure.
fn reextracted_candidates(transcript: &Transcript, bench: &AlignedBenchmark) -> Vec<(u32, String)> {
    let entry = bench
        .task(transcript.task_number, transcript.target)
        .ok()
        .and_then(|task| crate::prompting::entry_point_name(transcript.target, &task.declaration));
    let extract = |content: &str| -> String {
        extract_code(content, transcript.target, entry.as_deref())
            .map(|ex| ex.code)
            .unwrap_or_default()
    };
    match transcript.strategy {
        Strategy::Repeat(_) => transcript
            .stages
            .iter()
            .filter_map(|s| s.response.as_ref())
            .enumerate()
            .map(|(i, response)| (i as u32 + 1, extract(&response.content)))
            .collect(),
        _ => {
            let last_response = transcript
                .stages
                .iter()
                .rev()
                .find_map(|s| s.response.as_ref());
            match last_response {
                Some(response) => vec![(1, extract(&response.content))],
                // Fully synthetic transcript: fall back to the stored code.
                None => vec![(1, transcript.final_code.clone())],
            }
        }
    }
}
