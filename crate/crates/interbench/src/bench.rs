//! Multi-language benchmark loading and cross-language alignment.
//!
//! Suites are line-delimited record files in the HumanEval-X layout, one file
//! per language. Tasks are aligned across languages by numeric index so that
//! "the same task in language X and Y" is well-defined, which the
//! ground-truth-intermediate experiment depends on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// The five concrete programming languages the benchmark covers.
///
/// Informal representations (natural language, pseudo code) are not languages;
/// they live in [`crate::prompting::Strategy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageId {
    Cpp,
    Go,
    Java,
    Python,
    Rust,
}

impl LanguageId {
    pub const ALL: [LanguageId; 5] = [
        LanguageId::Cpp,
        LanguageId::Go,
        LanguageId::Java,
        LanguageId::Python,
        LanguageId::Rust,
    ];

    /// Stable lowercase name, used in file paths and report headers.
    pub fn as_str(self) -> &'static str {
        match self {
            LanguageId::Cpp => "cpp",
            LanguageId::Go => "go",
            LanguageId::Java => "java",
            LanguageId::Python => "python",
            LanguageId::Rust => "rust",
        }
    }

    /// Human-facing name used in prompts and table rows.
    pub fn display_name(self) -> &'static str {
        match self {
            LanguageId::Cpp => "C++",
            LanguageId::Go => "Go",
            LanguageId::Java => "Java",
            LanguageId::Python => "Python",
            LanguageId::Rust => "Rust",
        }
    }

    pub fn parse(s: &str) -> Option<LanguageId> {
        match s.to_ascii_lowercase().as_str() {
            "cpp" | "c++" | "cxx" => Some(LanguageId::Cpp),
            "go" | "golang" => Some(LanguageId::Go),
            "java" => Some(LanguageId::Java),
            "python" | "py" | "python3" => Some(LanguageId::Python),
            "rust" | "rs" => Some(LanguageId::Rust),
            _ => None,
        }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LanguageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageId::parse(s).ok_or_else(|| format!("unknown language `{s}`"))
    }
}

/// One programming problem in one concrete language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    /// Dataset identifier, `<Lang>/<index>`.
    pub task_id: String,
    pub language: LanguageId,
    /// Natural-language problem statement, with any embedded declaration
    /// stripped so it can be shown without the target signature.
    pub description: String,
    /// Target-language function signature/stub, including imports.
    pub declaration: String,
    /// Reference implementation that completes the declaration.
    pub canonical_solution: String,
    /// Executable assertions driving a candidate.
    pub test_harness: String,
    pub example_test: Option<String>,
}

impl BenchmarkTask {
    /// Numeric index parsed from the task id.
    pub fn number(&self) -> Option<u32> {
        self.task_id.rsplit('/').next()?.parse().ok()
    }
}

/// Where the loader finds the declaration in a record.
///
/// Most releases carry a dedicated `declaration` field; some fold it into
/// `prompt` for certain languages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum DeclarationSource {
    /// Use the record's `declaration` field.
    #[default]
    Field,
    /// The declaration is the part of `prompt` from the given marker onward.
    PromptFromMarker(String),
}

/// Per-language ingestion knobs for dataset variants.
#[derive(Debug, Clone, Default)]
pub struct IngestionProfile {
    pub declaration_source: DeclarationSource,
}

/// All tasks of one language, ordered by numeric index.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    pub language: LanguageId,
    tasks: Vec<BenchmarkTask>,
    index: BTreeMap<u32, usize>,
}

impl TaskSuite {
    pub fn tasks(&self) -> &[BenchmarkTask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, number: u32) -> Option<&BenchmarkTask> {
        self.index.get(&number).map(|&i| &self.tasks[i])
    }

    pub fn task_numbers(&self) -> impl Iterator<Item = u32> + '_ {
        self.index.keys().copied()
    }
}

/// Suites for several languages restricted to their common task numbers.
#[derive(Debug, Clone)]
pub struct AlignedBenchmark {
    suites: BTreeMap<LanguageId, TaskSuite>,
    numbers: BTreeSet<u32>,
}

/// Numbers dropped while aligning (present in some suite but not all).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignReport {
    pub dropped: BTreeSet<u32>,
}

impl AlignedBenchmark {
    pub fn languages(&self) -> impl Iterator<Item = LanguageId> + '_ {
        self.suites.keys().copied()
    }

    pub fn has_language(&self, language: LanguageId) -> bool {
        self.suites.contains_key(&language)
    }

    pub fn suite(&self, language: LanguageId) -> Option<&TaskSuite> {
        self.suites.get(&language)
    }

    pub fn task_numbers(&self) -> impl Iterator<Item = u32> + '_ {
        self.numbers.iter().copied()
    }

    pub fn task(&self, number: u32, language: LanguageId) -> Result<&BenchmarkTask, BenchError> {
        self.suites
            .get(&language)
            .and_then(|s| s.task(number))
            .filter(|_| self.numbers.contains(&number))
            .ok_or(BenchError::UnknownTask { number, language })
    }

    /// Canonical solution for a task, verbatim as stored in the dataset.
    pub fn ground_truth(&self, number: u32, language: LanguageId) -> Result<&str, BenchError> {
        self.task(number, language)
            .map(|t| t.canonical_solution.as_str())
    }

    /// Digest over every task of every suite, for run manifests.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for suite in self.suites.values() {
            for task in suite.tasks() {
                for field in [
                    task.task_id.as_str(),
                    task.description.as_str(),
                    task.declaration.as_str(),
                    task.canonical_solution.as_str(),
                    task.test_harness.as_str(),
                    task.example_test.as_deref().unwrap_or(""),
                ] {
                    hasher.update((field.len() as u64).to_le_bytes());
                    hasher.update(field.as_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate task id `{task_id}`")]
    DuplicateTaskId { task_id: String },
    #[error("suite file contains no records")]
    EmptySuite,
    #[error("no task numbers common to all suites")]
    NoCommonTasks,
    #[error("unknown task {number} in {language}")]
    UnknownTask { number: u32, language: LanguageId },
    #[error("align needs at least two suites with distinct languages")]
    TooFewSuites,
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Raw record shape of the HumanEval-X release files.
#[derive(Debug, Deserialize)]
struct RawRecord {
    task_id: Option<String>,
    prompt: Option<String>,
    declaration: Option<String>,
    canonical_solution: Option<String>,
    test: Option<String>,
    example_test: Option<String>,
}

/// Load one language's suite from a line-delimited record file.
///
/// Plain and gz-compressed files are both accepted. Records whose task-id
/// language prefix does not match `language` are rejected as malformed.
pub fn load_suite(path: &Path, language: LanguageId) -> Result<TaskSuite, BenchError> {
    load_suite_with_profile(path, language, &IngestionProfile::default())
}

pub fn load_suite_with_profile(
    path: &Path,
    language: LanguageId,
    profile: &IngestionProfile,
) -> Result<TaskSuite, BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    load_suite_from_reader(BufReader::new(reader), language, profile)
}

/// Load a suite from any line-delimited reader; useful for in-memory
/// fixtures.
pub fn load_suite_from_reader<R: BufRead>(
    reader: R,
    language: LanguageId,
    profile: &IngestionProfile,
) -> Result<TaskSuite, BenchError> {
    let mut tasks: Vec<BenchmarkTask> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| BenchError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| BenchError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let task = record_to_task(raw, language, profile, line_no)?;
        if !seen.insert(task.task_id.clone()) {
            return Err(BenchError::DuplicateTaskId {
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }

    if tasks.is_empty() {
        return Err(BenchError::EmptySuite);
    }

    // Stable ordering by numeric index keeps report rows deterministic.
    tasks.sort_by_key(|t| t.number().unwrap_or(u32::MAX));
    let index = tasks
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.number().map(|n| (n, i)))
        .collect();

    Ok(TaskSuite {
        language,
        tasks,
        index,
    })
}

fn record_to_task(
    raw: RawRecord,
    language: LanguageId,
    profile: &IngestionProfile,
    line: usize,
) -> Result<BenchmarkTask, BenchError> {
    let missing = |field: &str| BenchError::MalformedRecord {
        line,
        reason: format!("missing field `{field}`"),
    };
    let task_id = raw.task_id.ok_or_else(|| missing("task_id"))?;
    let prompt = raw.prompt.ok_or_else(|| missing("prompt"))?;
    let canonical_solution = raw
        .canonical_solution
        .ok_or_else(|| missing("canonical_solution"))?;
    let test = raw.test.ok_or_else(|| missing("test"))?;

    let prefix = task_id.split('/').next().unwrap_or("");
    match LanguageId::parse(prefix) {
        Some(l) if l == language => {}
        _ => {
            return Err(BenchError::MalformedRecord {
                line,
                reason: format!(
                    "task_id prefix `{prefix}` does not match suite language `{language}`"
                ),
            })
        }
    }

    let declaration = match &profile.declaration_source {
        DeclarationSource::Field => raw
            .declaration
            .filter(|d| !d.trim().is_empty())
            .ok_or_else(|| missing("declaration"))?,
        DeclarationSource::PromptFromMarker(marker) => match prompt.find(marker.as_str()) {
            Some(pos) => prompt[pos..].to_string(),
            None => {
                return Err(BenchError::MalformedRecord {
                    line,
                    reason: format!("declaration marker `{marker}` not found in prompt"),
                })
            }
        },
    };

    let description = strip_declaration(&prompt, &declaration);
    if description.trim().is_empty() {
        return Err(BenchError::MalformedRecord {
            line,
            reason: "prompt is empty after removing the declaration".into(),
        });
    }
    if test.trim().is_empty() {
        return Err(BenchError::MalformedRecord {
            line,
            reason: "field `test` is empty".into(),
        });
    }

    Ok(BenchmarkTask {
        task_id,
        language,
        description,
        declaration,
        canonical_solution,
        test_harness: test,
        example_test: raw.example_test.filter(|t| !t.trim().is_empty()),
    })
}

/// The intermediate-stage prompt must not contain the target declaration, so
/// the description is the prompt with any embedded copy of it removed.
fn strip_declaration(prompt: &str, declaration: &str) -> String {
    let decl = declaration.trim();
    if decl.is_empty() {
        return prompt.trim().to_string();
    }
    if let Some(pos) = prompt.find(decl) {
        let mut out = String::with_capacity(prompt.len() - decl.len());
        out.push_str(&prompt[..pos]);
        out.push_str(&prompt[pos + decl.len()..]);
        return out.trim().to_string();
    }
    prompt.trim().to_string()
}

/// Restrict suites to their common task numbers.
///
/// Returns the aligned benchmark plus a report of the numbers dropped because
/// they were missing from at least one suite.
pub fn align(suites: Vec<TaskSuite>) -> Result<(AlignedBenchmark, AlignReport), BenchError> {
    let distinct: BTreeSet<LanguageId> = suites.iter().map(|s| s.language).collect();
    if suites.len() < 2 || distinct.len() != suites.len() {
        return Err(BenchError::TooFewSuites);
    }

    let mut common: Option<BTreeSet<u32>> = None;
    let mut union: BTreeSet<u32> = BTreeSet::new();
    for suite in &suites {
        let numbers: BTreeSet<u32> = suite.task_numbers().collect();
        union.extend(numbers.iter().copied());
        common = Some(match common {
            None => numbers,
            Some(c) => c.intersection(&numbers).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(BenchError::NoCommonTasks);
    }

    let dropped: BTreeSet<u32> = union.difference(&common).copied().collect();
    if !dropped.is_empty() {
        log::warn!(
            "alignment dropped {} task number(s): {:?}",
            dropped.len(),
            dropped
        );
    }

    let suites = suites.into_iter().map(|s| (s.language, s)).collect();
    Ok((
        AlignedBenchmark {
            suites,
            numbers: common,
        },
        AlignReport { dropped },
    ))
}

/// Convenience over [`align`] for a single-language benchmark, used by plans
/// that never cross languages.
pub fn single(suite: TaskSuite) -> AlignedBenchmark {
    let numbers = suite.task_numbers().collect();
    let mut suites = BTreeMap::new();
    suites.insert(suite.language, suite);
    AlignedBenchmark { suites, numbers }
}

/// Load every per-language file found in a directory.
///
/// Files are expected to be named `<language>.jsonl` or `<language>.jsonl.gz`.
pub fn load_dir(dir: &Path) -> Result<Vec<TaskSuite>, BenchError> {
    let mut suites = Vec::new();
    for language in LanguageId::ALL {
        let plain = dir.join(format!("{language}.jsonl"));
        let gz = dir.join(format!("{language}.jsonl.gz"));
        let path = if plain.exists() {
            plain
        } else if gz.exists() {
            gz
        } else {
            continue;
        };
        suites.push(load_suite(&path, language)?);
    }
    Ok(suites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn record(task_id: &str, declaration: &str) -> String {
        serde_json::json!({
            "task_id": task_id,
            "prompt": format!("Add two numbers.\n{declaration}"),
            "declaration": declaration,
            "canonical_solution": "    return a + b\n",
            "test": "assert add(1, 2) == 3\n",
            "example_test": "",
        })
        .to_string()
    }

    fn load(lines: &[String], language: LanguageId) -> Result<TaskSuite, BenchError> {
        let joined = lines.join("\n");
        load_suite_from_reader(
            Cursor::new(joined.into_bytes()),
            language,
            &IngestionProfile::default(),
        )
    }

    #[test]
    fn loads_well_formed_records() {
        let lines: Vec<String> = (0..164)
            .map(|i| record(&format!("Python/{i}"), "def add(a, b):"))
            .collect();
        let suite = load(&lines, LanguageId::Python).unwrap();
        assert_eq!(suite.len(), 164);
        assert_eq!(suite.task(163).unwrap().task_id, "Python/163");
    }

    #[test]
    fn empty_file_is_empty_suite() {
        let err = load(&[], LanguageId::Python).unwrap_err();
        assert!(matches!(err, BenchError::EmptySuite));
    }

    #[test]
    fn missing_test_field_is_malformed_at_line() {
        let mut value: serde_json::Value =
            serde_json::from_str(&record("Python/0", "def add(a, b):")).unwrap();
        value.as_object_mut().unwrap().remove("test");
        let err = load(&[value.to_string()], LanguageId::Python).unwrap_err();
        match err {
            BenchError::MalformedRecord { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("test"), "{reason}");
            }
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn wrong_language_prefix_rejected() {
        let err = load(
            &[record("Go/0", "def add(a, b):")],
            LanguageId::Python,
        )
        .unwrap_err();
        assert!(matches!(err, BenchError::MalformedRecord { .. }));
    }

    #[test]
    fn duplicate_task_id_rejected() {
        let lines = vec![
            record("Python/0", "def add(a, b):"),
            record("Python/0", "def add(a, b):"),
        ];
        let err = load(&lines, LanguageId::Python).unwrap_err();
        assert!(matches!(err, BenchError::DuplicateTaskId { .. }));
    }

    #[test]
    fn description_has_declaration_stripped() {
        let suite = load(&[record("Python/0", "def add(a, b):")], LanguageId::Python).unwrap();
        let task = suite.task(0).unwrap();
        assert_eq!(task.description, "Add two numbers.");
        assert!(!task.description.contains(&task.declaration));
    }

    #[test]
    fn declaration_from_prompt_marker() {
        let line = serde_json::json!({
            "task_id": "Python/0",
            "prompt": "Add two numbers.\ndef add(a, b):",
            "canonical_solution": "    return a + b\n",
            "test": "assert add(1, 2) == 3\n",
        })
        .to_string();
        let profile = IngestionProfile {
            declaration_source: DeclarationSource::PromptFromMarker("def ".into()),
        };
        let suite =
            load_suite_from_reader(Cursor::new(line.into_bytes()), LanguageId::Python, &profile)
                .unwrap();
        let task = suite.task(0).unwrap();
        assert_eq!(task.declaration, "def add(a, b):");
        assert_eq!(task.description, "Add two numbers.");
    }

    #[test]
    fn load_is_deterministic() {
        let lines: Vec<String> = (0..20)
            .map(|i| record(&format!("Rust/{i}"), "fn add(a: i64, b: i64) -> i64 {"))
            .collect();
        let a = load(&lines, LanguageId::Rust).unwrap();
        let b = load(&lines, LanguageId::Rust).unwrap();
        assert_eq!(a.tasks(), b.tasks());
    }

    fn suite_with_numbers(language: LanguageId, numbers: &[u32]) -> TaskSuite {
        let lines: Vec<String> = numbers
            .iter()
            .map(|n| record(&format!("{}/{n}", language.as_str()), "def add(a, b):"))
            .collect();
        load(&lines, language).unwrap()
    }

    #[test]
    fn align_identical_suites_drops_nothing() {
        let a = suite_with_numbers(LanguageId::Python, &[0, 1, 2]);
        let b = suite_with_numbers(LanguageId::Go, &[0, 1, 2]);
        let (bench, report) = align(vec![a, b]).unwrap();
        assert_eq!(bench.task_numbers().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(report.dropped.is_empty());
    }

    #[test]
    fn align_intersects_and_reports_drops() {
        let a = suite_with_numbers(LanguageId::Python, &[0, 1, 2]);
        let b = suite_with_numbers(LanguageId::Go, &[1, 2, 3]);
        let (bench, report) = align(vec![a, b]).unwrap();
        assert_eq!(bench.task_numbers().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(report.dropped, BTreeSet::from([0, 3]));
    }

    #[test]
    fn align_suite_order_does_not_change_result() {
        let a = suite_with_numbers(LanguageId::Python, &[0, 1, 2]);
        let b = suite_with_numbers(LanguageId::Go, &[1, 2, 3]);
        let (x, rx) = align(vec![a.clone(), b.clone()]).unwrap();
        let (y, ry) = align(vec![b, a]).unwrap();
        assert_eq!(
            x.task_numbers().collect::<Vec<_>>(),
            y.task_numbers().collect::<Vec<_>>()
        );
        assert_eq!(rx.dropped, ry.dropped);
    }

    #[test]
    fn align_disjoint_suites_fails() {
        let a = suite_with_numbers(LanguageId::Python, &[0]);
        let b = suite_with_numbers(LanguageId::Go, &[1]);
        assert!(matches!(align(vec![a, b]), Err(BenchError::NoCommonTasks)));
    }

    #[test]
    fn ground_truth_is_verbatim() {
        let a = suite_with_numbers(LanguageId::Cpp, &[0]);
        let b = suite_with_numbers(LanguageId::Go, &[0]);
        let (bench, _) = align(vec![a, b]).unwrap();
        assert_eq!(
            bench.ground_truth(0, LanguageId::Cpp).unwrap(),
            "    return a + b\n"
        );
        assert!(matches!(
            bench.ground_truth(999, LanguageId::Go),
            Err(BenchError::UnknownTask { .. })
        ));
    }
}
