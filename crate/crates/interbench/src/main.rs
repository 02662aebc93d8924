//! Command-line front end for the intermediate-target prompting harness.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use interbench::bench::{self, LanguageId};
use interbench::prompting::Strategy;
use interbench::runner::{
    self, load_benchmark, load_plan, read_manifest, read_records, report, ExperimentPlan,
    RunOptions,
};
use interbench::sandbox::Sandbox;
use interbench::stats::TableFamily;

#[derive(Parser)]
#[command(
    name = "interbench",
    version,
    about = "Benchmark harness for intermediate-target prompting: generate in one representation, translate to another, execute, and compare."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment plan; interrupted runs resume where they left off
    Run(RunArgs),
    /// Render result tables (CSV and markdown) from a finished or partial run
    Report(ReportArgs),
    /// Compile and execute every canonical benchmark solution locally
    ValidateBench(ValidateArgs),
    /// Probe which language toolchains this machine can execute
    CheckToolchains(CheckToolchainsArgs),
    /// Re-extract and re-execute a run's stored transcripts, with no model calls
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment plan (TOML)
    #[arg(long)]
    plan: PathBuf,
    /// Benchmark directory of `<language>.jsonl[.gz]` files; overrides the plan
    #[arg(long)]
    bench_dir: Option<PathBuf>,
    /// Parent directory for run directories
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Cache model responses here so resumed runs skip completed calls
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Restrict to these task numbers: `0,3,17` or a half-open range `0..20`
    #[arg(long)]
    tasks: Option<String>,
    /// Restrict to these model ids from the plan (repeatable)
    #[arg(long = "model")]
    models: Vec<String>,
    /// Restrict to these strategy labels from the plan (repeatable)
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// Restrict to these target languages from the plan (repeatable)
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Worker threads; overrides the plan
    #[arg(long)]
    parallelism: Option<usize>,
    /// Seconds allowed per candidate for compile plus run; overrides the plan
    #[arg(long)]
    timeout: Option<f64>,
    /// Re-execute jobs whose records already exist
    #[arg(long)]
    force: bool,
    /// Keep each candidate's build directory under the run directory
    #[arg(long)]
    keep_artifacts: bool,
    /// Stop after this many jobs; rerun the same command to continue
    #[arg(long)]
    max_jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (or any directory containing records.jsonl)
    #[arg(long = "run")]
    run_dir: PathBuf,
    /// Where to write the table files; defaults to `<run>/report`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table families to render (repeatable); default: every family the data supports
    #[arg(long = "family")]
    families: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Benchmark directory of `<language>.jsonl[.gz]` files
    #[arg(long)]
    bench_dir: PathBuf,
    /// Restrict to these task numbers: `0,3,17` or a half-open range `0..20`
    #[arg(long)]
    tasks: Option<String>,
    /// Seconds allowed per canonical solution
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args)]
struct CheckToolchainsArgs {
    /// Languages to probe (repeatable); default: all known languages
    #[arg(long = "lang")]
    languages: Vec<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run directory holding transcripts.jsonl and manifest.json
    #[arg(long = "run")]
    run_dir: PathBuf,
    /// Benchmark directory; overrides the one recorded in the manifest
    #[arg(long)]
    bench_dir: Option<PathBuf>,
    /// Keep each candidate's build directory under the replay directory
    #[arg(long)]
    keep_artifacts: bool,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::ValidateBench(args) => cmd_validate(args),
        Command::CheckToolchains(args) => cmd_check_toolchains(args),
        Command::Replay(args) => cmd_replay(args),
    }
}

/// `0,3,17` or a half-open range `4..20`.
fn parse_tasks(spec: &str) -> anyhow::Result<Vec<u32>> {
    let spec = spec.trim();
    if let Some((start, end)) = spec.split_once("..") {
        let start: u32 = start.trim().parse().context("range start is not a number")?;
        let end: u32 = end.trim().parse().context("range end is not a number")?;
        if end <= start {
            bail!("empty task range `{spec}`");
        }
        return Ok((start..end).collect());
    }
    spec.split(',')
        .map(|part| {
            part.trim()
                .parse::<u32>()
                .with_context(|| format!("bad task number `{part}`"))
        })
        .collect()
}

fn parse_language(s: &str) -> anyhow::Result<LanguageId> {
    LanguageId::parse(s).ok_or_else(|| anyhow::anyhow!("unknown language `{s}`"))
}

/// Narrow a plan to CLI-selected models/strategies/targets, refusing
/// selections the plan does not contain.
fn apply_filters(plan: &mut ExperimentPlan, args: &RunArgs) -> anyhow::Result<()> {
    if let Some(tasks) = &args.tasks {
        plan.tasks = Some(parse_tasks(tasks)?);
    }
    if !args.models.is_empty() {
        let wanted: BTreeSet<&str> = args.models.iter().map(String::as_str).collect();
        let known: BTreeSet<&str> = plan.models.iter().map(|m| m.id()).collect();
        for id in &wanted {
            if !known.contains(id) {
                bail!("--model {id}: not in the plan (plan has: {})", join(&known));
            }
        }
        plan.models.retain(|m| wanted.contains(m.id()));
    }
    if !args.strategies.is_empty() {
        let mut wanted = BTreeSet::new();
        for label in &args.strategies {
            let strategy: Strategy = label
                .parse()
                .map_err(|e| anyhow::anyhow!("--strategy {label}: {e}"))?;
            if !plan.strategies.contains(&strategy) {
                bail!("--strategy {label}: not in the plan");
            }
            wanted.insert(strategy);
        }
        plan.strategies.retain(|s| wanted.contains(s));
    }
    if !args.targets.is_empty() {
        let mut wanted = BTreeSet::new();
        for name in &args.targets {
            let target = parse_language(name)?;
            if !plan.targets.contains(&target) {
                bail!("--target {name}: not in the plan");
            }
            wanted.insert(target);
        }
        plan.targets.retain(|t| wanted.contains(t));
    }
    if let Some(parallelism) = args.parallelism {
        plan.parallelism = parallelism;
    }
    if let Some(timeout) = args.timeout {
        plan.timeout_s = timeout;
    }
    Ok(())
}

fn join(set: &BTreeSet<&str>) -> String {
    set.iter().copied().collect::<Vec<_>>().join(", ")
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut plan = load_plan(&args.plan)?;
    apply_filters(&mut plan, &args)?;
    let plan_dir = args
        .plan
        .parent()
        .map(|p| p.to_path_buf())
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let opts = RunOptions {
        out_dir: args.out,
        bench_dir: args.bench_dir,
        cache_dir: args.cache_dir,
        force: args.force,
        keep_artifacts: args.keep_artifacts,
        max_jobs: args.max_jobs,
        plan_dir,
    };
    let sandbox = Sandbox::new();
    let outcome = runner::run(&plan, &sandbox, &opts)?;
    println!("run {}", outcome.run_id);
    println!("  directory: {}", outcome.run_dir.display());
    println!(
        "  jobs: {} total, {} already done, {} executed now ({} toolchain skips), {} deferred",
        outcome.total_jobs, outcome.resumed, outcome.executed, outcome.skipped, outcome.deferred
    );
    if outcome.deferred > 0 {
        println!("  rerun the same command to continue this run");
    } else {
        println!(
            "  next: interbench report --run {}",
            outcome.run_dir.display()
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let records = read_records(&args.run_dir)?;
    if records.is_empty() {
        bail!(
            "no records in {}; did the run produce results?",
            args.run_dir.display()
        );
    }
    let mut families = Vec::new();
    for name in &args.families {
        let family = TableFamily::parse(name)
            .ok_or_else(|| anyhow::anyhow!("unknown table family `{name}`"))?;
        families.push(family);
    }
    let out_dir = args.out.unwrap_or_else(|| args.run_dir.join("report"));
    let written = report::write_reports(&records, &families, &out_dir)?;
    println!("{} records -> {}", records.len(), out_dir.display());
    for path in written {
        println!("  {}", path.display());
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<()> {
    let suites = bench::load_dir(&args.bench_dir)?;
    let aligned = if suites.len() == 1 {
        bench::single(suites.into_iter().next().expect("one suite"))
    } else {
        let (aligned, report) = bench::align(suites)?;
        for dropped in &report.dropped {
            println!("note: task {dropped} dropped during alignment (not in every language)");
        }
        aligned
    };
    let tasks = args.tasks.as_deref().map(parse_tasks).transpose()?;
    let sandbox = Sandbox::new();
    let report = runner::validate_benchmark(
        &aligned,
        &sandbox,
        tasks.as_deref(),
        Duration::from_secs_f64(args.timeout),
    );
    for lang in &report.languages {
        match &lang.skipped {
            Some(reason) => println!("{}: skipped ({reason})", lang.language),
            None => {
                println!(
                    "{}: {}/{} canonical solutions pass",
                    lang.language, lang.passed, lang.checked
                );
                for failure in &lang.failures {
                    println!(
                        "  task {}: {} — {}",
                        failure.task_number,
                        failure.status.as_str(),
                        failure.detail.lines().next().unwrap_or("")
                    );
                }
            }
        }
    }
    if !report.clean() {
        bail!("benchmark validation failed");
    }
    println!("benchmark validated");
    Ok(())
}

fn cmd_check_toolchains(args: CheckToolchainsArgs) -> anyhow::Result<()> {
    let languages: Vec<LanguageId> = if args.languages.is_empty() {
        LanguageId::ALL.to_vec()
    } else {
        args.languages
            .iter()
            .map(|s| parse_language(s))
            .collect::<Result<_, _>>()?
    };
    let report = Sandbox::new().check_toolchains(&languages);
    for probe in &report.probes {
        if probe.available {
            println!(
                "{}: ok ({})",
                probe.language,
                probe.version.as_deref().unwrap_or("version unknown")
            );
        } else {
            println!(
                "{}: unavailable ({})",
                probe.language,
                probe.detail.as_deref().unwrap_or("unknown reason")
            );
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> anyhow::Result<()> {
    let manifest = read_manifest(&args.run_dir)?;
    let bench = load_benchmark(
        &manifest.plan,
        args.bench_dir.as_deref(),
        std::path::Path::new("."),
    )?;
    let sandbox = Sandbox::new();
    let outcome = runner::replay(&args.run_dir, &bench, &sandbox, args.keep_artifacts)?;
    let passed = outcome.records.iter().filter(|r| r.passed).count();
    println!(
        "replayed {} transcripts: {} records, {} passing",
        outcome.jobs,
        outcome.records.len(),
        passed
    );
    println!("  results: {}", outcome.replay_dir.display());
    println!(
        "  next: interbench report --run {}",
        outcome.replay_dir.display()
    );
    Ok(())
}
