//! Compile and run candidate programs in isolated subprocesses.
//!
//! A candidate is assembled with its task's declaration and test harness into
//! one source file, built and executed with the language's toolchain inside a
//! scratch directory, and classified into a [`Verdict`]. The whole time
//! budget covers compilation and execution together; on expiry the entire
//! process group is killed so grandchildren cannot linger.

mod assemble;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bench::LanguageId;
pub use assemble::{assemble, AssemblyError};

/// Outcome class for one executed candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    /// Tests ran and all assertions held.
    Pass,
    /// Tests ran and an assertion failed.
    Fail,
    /// The toolchain rejected the program.
    CompileError,
    /// The program crashed outside an assertion.
    RuntimeError,
    /// Compile plus run exceeded the time budget.
    Timeout,
    /// The harness itself failed (missing toolchain, scratch-dir errors);
    /// never counted against the model.
    InfraError,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::CompileError => "compile_error",
            VerdictStatus::RuntimeError => "runtime_error",
            VerdictStatus::Timeout => "timeout",
            VerdictStatus::InfraError => "infra_error",
        }
    }

    /// Whether the candidate was actually judged (infrastructure trouble is
    /// excluded from every rate).
    pub fn is_judgment(self) -> bool {
        !matches!(self, VerdictStatus::InfraError)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Diagnostic output (stderr, falling back to stdout), truncated.
    pub detail: String,
    pub duration_ms: u64,
}

impl Verdict {
    fn new(status: VerdictStatus, detail: impl Into<String>, started: Instant) -> Verdict {
        Verdict {
            status,
            detail: detail.into(),
            duration_ms: started.elapsed().as_millis() as u64,
        }
    }
}

/// One source file to materialize in the scratch directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub name: String,
    pub contents: String,
}

/// A fully assembled program plus its execution constraints.
#[derive(Debug, Clone)]
pub struct ExecutionSpec {
    pub language: LanguageId,
    pub files: Vec<SourceFile>,
    /// Budget for compile and run combined.
    pub timeout: Duration,
    /// Address-space cap for the child, where the language tolerates one.
    pub memory_limit_bytes: Option<u64>,
    /// Copy the scratch directory here after execution, for debugging.
    pub keep_artifacts: Option<PathBuf>,
}

impl ExecutionSpec {
    /// Single-file program using the language's conventional file name.
    pub fn single_file(language: LanguageId, contents: String, timeout: Duration) -> ExecutionSpec {
        ExecutionSpec {
            language,
            files: vec![SourceFile {
                name: ToolchainConfig::default_for(language).source_file,
                contents,
            }],
            timeout,
            memory_limit_bytes: None,
            keep_artifacts: None,
        }
    }
}

/// How one language is built and run. Argv templates substitute `{src}`
/// (first source file), `{bin}` (scratch binary path), and `{dir}` (scratch
/// directory).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    /// Conventional name for the assembled source file.
    pub source_file: String,
    /// Build step; absent for interpreted languages.
    pub compile: Option<Vec<String>>,
    pub run: Vec<String>,
    /// Cheap availability probe, typically `--version`.
    pub probe: Vec<String>,
    /// JVMs reserve address space far beyond real use, so a hard cap would
    /// break them.
    pub supports_memory_limit: bool,
}

impl ToolchainConfig {
    pub fn default_for(language: LanguageId) -> ToolchainConfig {
        let s = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match language {
            LanguageId::Cpp => ToolchainConfig {
                source_file: "main.cpp".into(),
                compile: Some(s(&["g++", "-std=c++17", "-O1", "-o", "{bin}", "{src}"])),
                run: s(&["{bin}"]),
                probe: s(&["g++", "--version"]),
                supports_memory_limit: true,
            },
            LanguageId::Go => ToolchainConfig {
                source_file: "main.go".into(),
                compile: Some(s(&["go", "build", "-o", "{bin}", "{src}"])),
                run: s(&["{bin}"]),
                probe: s(&["go", "version"]),
                supports_memory_limit: false,
            },
            LanguageId::Java => ToolchainConfig {
                source_file: "Main.java".into(),
                compile: Some(s(&["javac", "-d", "{dir}", "{src}"])),
                run: s(&["java", "-ea", "-cp", "{dir}", "Main"]),
                probe: s(&["javac", "-version"]),
                supports_memory_limit: false,
            },
            LanguageId::Python => ToolchainConfig {
                source_file: "main.py".into(),
                compile: None,
                run: s(&["python3", "{src}"]),
                probe: s(&["python3", "--version"]),
                supports_memory_limit: true,
            },
            LanguageId::Rust => ToolchainConfig {
                source_file: "main.rs".into(),
                compile: Some(s(&[
                    "rustc",
                    "--edition",
                    "2021",
                    "-O",
                    "-o",
                    "{bin}",
                    "{src}",
                ])),
                run: s(&["{bin}"]),
                probe: s(&["rustc", "--version"]),
                supports_memory_limit: true,
            },
        }
    }
}

/// Stderr markers that mean a *test assertion* failed, separating honest
/// wrong answers from unrelated crashes.
fn assertion_markers(language: LanguageId) -> &'static [&'static str] {
    match language {
        LanguageId::Python => &["AssertionError"],
        LanguageId::Cpp => &["Assertion"],
        LanguageId::Go => &["assertion failed", "FAIL"],
        LanguageId::Java => &["AssertionError"],
        LanguageId::Rust => &["assertion failed", "assertion `"],
    }
}

/// Availability of one language's toolchain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolchainProbe {
    pub language: LanguageId,
    pub available: bool,
    pub version: Option<String>,
    /// Why the toolchain was judged unusable.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolchainReport {
    pub probes: Vec<ToolchainProbe>,
}

impl ToolchainReport {
    pub fn available(&self, language: LanguageId) -> bool {
        self.probes
            .iter()
            .any(|p| p.language == language && p.available)
    }

    pub fn probe(&self, language: LanguageId) -> Option<&ToolchainProbe> {
        self.probes.iter().find(|p| p.language == language)
    }
}

/// Executes assembled programs through per-language toolchains.
#[derive(Debug, Clone)]
pub struct Sandbox {
    configs: BTreeMap<LanguageId, ToolchainConfig>,
    /// Verdict detail is clipped to this many bytes.
    pub detail_limit: usize,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox::new()
    }
}

impl Sandbox {
    pub fn new() -> Sandbox {
        Sandbox {
            configs: LanguageId::ALL
                .into_iter()
                .map(|l| (l, ToolchainConfig::default_for(l)))
                .collect(),
            detail_limit: 4096,
        }
    }

    pub fn with_config(mut self, language: LanguageId, config: ToolchainConfig) -> Sandbox {
        self.configs.insert(language, config);
        self
    }

    pub fn config(&self, language: LanguageId) -> &ToolchainConfig {
        &self.configs[&language]
    }

    /// Build (if needed) and run one assembled program. Every failure mode is
    /// folded into the verdict; the harness's own trouble surfaces as
    /// [`VerdictStatus::InfraError`].
    pub fn execute(&self, spec: &ExecutionSpec) -> Verdict {
        self.execute_inner(spec, Instant::now())
    }

    fn execute_inner(&self, spec: &ExecutionSpec, started: Instant) -> Verdict {
        let config = match self.configs.get(&spec.language) {
            Some(c) => c,
            None => {
                return Verdict::new(
                    VerdictStatus::InfraError,
                    format!("no toolchain configured for {}", spec.language),
                    started,
                )
            }
        };

        let scratch = match tempfile::Builder::new().prefix("interbench-exec").tempdir() {
            Ok(d) => d,
            Err(e) => {
                return Verdict::new(
                    VerdictStatus::InfraError,
                    format!("scratch dir: {e}"),
                    started,
                )
            }
        };
        let dir = scratch.path().to_path_buf();

        for file in &spec.files {
            if let Err(e) = std::fs::write(dir.join(&file.name), &file.contents) {
                return Verdict::new(
                    VerdictStatus::InfraError,
                    format!("writing {}: {e}", file.name),
                    started,
                );
            }
        }

        let src = dir.join(
            spec.files
                .first()
                .map(|f| f.name.as_str())
                .unwrap_or(config.source_file.as_str()),
        );
        let bin = dir.join("prog");
        let subst = |argv: &[String]| -> Vec<String> {
            argv.iter()
                .map(|a| {
                    a.replace("{src}", &src.to_string_lossy())
                        .replace("{bin}", &bin.to_string_lossy())
                        .replace("{dir}", &dir.to_string_lossy())
                })
                .collect()
        };
        let deadline = started + spec.timeout;
        let mem_limit = spec
            .memory_limit_bytes
            .filter(|_| config.supports_memory_limit);

        let verdict = (|| {
            if let Some(compile) = &config.compile {
                let outcome = run_command(&subst(compile), &dir, deadline, None)?;
                if outcome.timed_out {
                    return Ok(Verdict::new(
                        VerdictStatus::Timeout,
                        self.clip(&outcome.detail()),
                        started,
                    ));
                }
                if outcome.exit_code != Some(0) {
                    return Ok(Verdict::new(
                        VerdictStatus::CompileError,
                        self.clip(&outcome.detail()),
                        started,
                    ));
                }
            }

            let outcome = run_command(&subst(&config.run), &dir, deadline, mem_limit)?;
            let detail = self.clip(&outcome.detail());
            let status = if outcome.timed_out {
                VerdictStatus::Timeout
            } else if outcome.exit_code == Some(0) {
                VerdictStatus::Pass
            } else {
                classify_failure(spec.language, &outcome.stderr)
            };
            Ok(Verdict::new(status, detail, started))
        })();

        let verdict = match verdict {
            Ok(v) => v,
            Err(SpawnError(msg)) => Verdict::new(VerdictStatus::InfraError, self.clip(&msg), started),
        };

        if let Some(dest) = &spec.keep_artifacts {
            if let Err(e) = copy_tree(&dir, dest) {
                log::warn!("keeping artifacts in {}: {e}", dest.display());
            }
        }
        verdict
    }

    fn clip(&self, text: &str) -> String {
        clip_to(text, self.detail_limit)
    }

    /// Probe each requested toolchain: version command first, then a
    /// hello-world through the full compile-and-run path.
    pub fn check_toolchains(&self, languages: &[LanguageId]) -> ToolchainReport {
        let probes = languages
            .iter()
            .map(|&language| self.probe_language(language))
            .collect();
        ToolchainReport { probes }
    }

    fn probe_language(&self, language: LanguageId) -> ToolchainProbe {
        let config = &self.configs[&language];
        let unavailable = |detail: String| ToolchainProbe {
            language,
            available: false,
            version: None,
            detail: Some(detail),
        };

        let mut command = Command::new(&config.probe[0]);
        command
            .args(&config.probe[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let output = match command.output() {
            Ok(o) => o,
            Err(e) => return unavailable(format!("{}: {e}", config.probe[0])),
        };
        if !output.status.success() {
            return unavailable(format!(
                "`{}` exited with {}",
                config.probe.join(" "),
                output.status
            ));
        }
        let version = [output.stdout, output.stderr]
            .iter()
            .filter_map(|bytes| String::from_utf8_lossy(bytes).lines().next().map(String::from))
            .find(|l| !l.trim().is_empty());

        let hello = ExecutionSpec::single_file(
            language,
            hello_world(language).to_string(),
            Duration::from_secs(60),
        );
        let verdict = self.execute(&hello);
        if verdict.status != VerdictStatus::Pass {
            return unavailable(format!(
                "hello-world probe ended as {}: {}",
                verdict.status.as_str(),
                verdict.detail
            ));
        }

        ToolchainProbe {
            language,
            available: true,
            version,
            detail: None,
        }
    }
}

fn hello_world(language: LanguageId) -> &'static str {
    match language {
        LanguageId::Cpp => "#include <cstdio>\nint main() { std::puts(\"ok\"); return 0; }\n",
        LanguageId::Go => "package main\n\nfunc main() {}\n",
        LanguageId::Java => {
            "public class Main {\n    public static void main(String[] args) { System.out.println(\"ok\"); }\n}\n"
        }
        LanguageId::Python => "print(\"ok\")\n",
        LanguageId::Rust => "fn main() { println!(\"ok\"); }\n",
    }
}

fn classify_failure(language: LanguageId, stderr: &str) -> VerdictStatus {
    if language == LanguageId::Python
        && (stderr.contains("SyntaxError") || stderr.contains("IndentationError"))
    {
        // Python has no separate build step; rejection at parse time is the
        // compiled languages' compile error.
        return VerdictStatus::CompileError;
    }
    if assertion_markers(language)
        .iter()
        .any(|m| stderr.contains(m))
    {
        VerdictStatus::Fail
    } else {
        VerdictStatus::RuntimeError
    }
}

fn clip_to(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut end = limit;
    while end > 0 && !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…[truncated]", &text[..end])
}

struct SpawnError(String);

struct CommandOutcome {
    exit_code: Option<i32>,
    timed_out: bool,
    stdout: String,
    stderr: String,
}

impl CommandOutcome {
    fn detail(&self) -> String {
        if self.timed_out {
            return "time budget exceeded".to_string();
        }
        if !self.stderr.trim().is_empty() {
            self.stderr.clone()
        } else {
            self.stdout.clone()
        }
    }
}

/// Run one command in its own process group with a cleared environment,
/// killing the whole group if `deadline` passes.
fn run_command(
    argv: &[String],
    dir: &Path,
    deadline: Instant,
    memory_limit: Option<u64>,
) -> Result<CommandOutcome, SpawnError> {
    use std::os::unix::process::CommandExt;

    if Instant::now() >= deadline {
        return Ok(CommandOutcome {
            exit_code: None,
            timed_out: true,
            stdout: String::new(),
            stderr: String::new(),
        });
    }

    let mut command = Command::new(&argv[0]);
    command
        .args(&argv[1..])
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env_clear()
        .process_group(0);
    // Keep only what toolchains need to locate themselves; everything else
    // (keys, proxies, user state) stays out of the child.
    for var in [
        "PATH",
        "HOME",
        "RUSTUP_HOME",
        "CARGO_HOME",
        "RUSTUP_TOOLCHAIN",
        "GOROOT",
        "JAVA_HOME",
    ] {
        if let Ok(value) = std::env::var(var) {
            command.env(var, value);
        }
    }
    command
        .env("LC_ALL", "C")
        .env("TMPDIR", dir)
        .env("GO111MODULE", "off")
        .env("GOCACHE", dir.join(".gocache"))
        .env("GOPATH", dir.join(".gopath"));

    if let Some(limit) = memory_limit {
        unsafe {
            command.pre_exec(move || {
                let rlim = libc::rlimit {
                    rlim_cur: limit,
                    rlim_max: limit,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &rlim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }

    let mut child = command
        .spawn()
        .map_err(|e| SpawnError(format!("spawning `{}`: {e}", argv[0])))?;

    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let mut timed_out = false;
    let exit_code;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                exit_code = status.code();
                break;
            }
            Ok(None) => {
                if Instant::now() >= deadline {
                    kill_group(&child);
                    let _ = child.wait();
                    timed_out = true;
                    exit_code = None;
                    break;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                kill_group(&child);
                let _ = child.wait();
                return Err(SpawnError(format!("waiting for `{}`: {e}", argv[0])));
            }
        }
    }

    Ok(CommandOutcome {
        exit_code,
        timed_out,
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
    })
}

/// Read a child stream to the end on a helper thread so a full pipe can
/// never deadlock the wait loop.
fn drain<R: Read + Send + 'static>(stream: Option<R>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut text = String::new();
        if let Some(mut stream) = stream {
            let mut bytes = Vec::new();
            let _ = stream.read_to_end(&mut bytes);
            text = String::from_utf8_lossy(&bytes).into_owned();
        }
        text
    })
}

fn kill_group(child: &Child) {
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
