use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use planbench::batch::{self, BatchConfig, PlannerSpec, ReportInput};
use planbench::generate::{self, GenerateSpec};
use planbench_core::protocol::timeout_from_env;
use planbench_core::scenario::Scenario;
use planbench_core::scoring::{Registry, ScoringPolicy};

const EXIT_PLANNER_FAILURE: u8 = 2;
const EXIT_INVALID_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "planbench", version, about = "Closed-loop benchmark for vehicle motion planners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write procedurally generated scenarios plus the regression set.
    Generate {
        #[arg(long)]
        seed: u64,
        /// JSON file with per-kind counts and an optional city preset.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one planner on every scenario of a directory.
    Run {
        #[arg(long)]
        scenarios: PathBuf,
        /// builtin:NAME or exec:COMMAND
        #[arg(long)]
        planner: String,
        /// open, closed or closed-reactive
        #[arg(long, default_value = "closed")]
        mode: String,
        /// Scoring policy; the built-in default when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Recompute scenario tags instead of using the stored ones.
        #[arg(long)]
        retag: bool,
    },
    /// Re-score reports under a policy and print the ranking.
    Score {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Check a scenario, policy or report file.
    Validate { file: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

fn invalid(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_INVALID_INPUT,
        message: message.to_string(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_policy(path: Option<&Path>, registry: &Registry) -> Result<ScoringPolicy, Failure> {
    let policy = match path {
        Some(p) => ScoringPolicy::from_json(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => ScoringPolicy::default(),
    };
    policy.validate(registry).map_err(invalid)?;
    Ok(policy)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn generate_cmd(seed: u64, spec: &Path, out: &Path) -> Result<u8, Failure> {
    let spec = GenerateSpec::from_json(&read(spec)?).map_err(invalid)?;
    let files = generate::generate(seed, &spec).map_err(invalid)?;
    generate::write_all(&files, out).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    eprintln!("wrote {} scenarios to {}", files.len(), out.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn run_cmd(
    scenarios: &Path,
    planner: &str,
    mode: &str,
    policy: Option<&Path>,
    out: &Path,
    jobs: usize,
    retag: bool,
) -> Result<u8, Failure> {
    let planner: PlannerSpec = planner.parse().map_err(invalid)?;
    let mode = batch::parse_mode(mode).ok_or_else(|| invalid(format!("unknown mode {mode:?}")))?;
    if jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    let mut config = BatchConfig::new(planner, mode);
    config.policy = load_policy(policy, &config.registry)?;
    config.jobs = jobs;
    config.retag = retag;
    config.timeout_ms = timeout_from_env();
    let loaded = batch::load_dir(scenarios).map_err(invalid)?;
    let scenarios: Vec<Scenario> = loaded.into_iter().map(|l| l.scenario).collect();
    let stderr = std::io::stderr();
    let mut progress = |done: usize, total: usize, id: &str, failed: bool| {
        let mut e = stderr.lock();
        let _ = writeln!(e, "[{done}/{total}] {id}{}", if failed { " FAILED" } else { "" });
    };
    let report = batch::run_batch(&scenarios, &config, &mut progress).map_err(invalid)?;
    write(out, &report.to_json())?;
    let failed = report.scenarios.iter().filter(|s| s.failed).count();
    eprintln!(
        "{} scenarios, {failed} failed, weighted score {:.4}",
        report.scenarios.len(),
        report.aggregate.score.weighted_sum
    );
    Ok(if report.any_failed() { EXIT_PLANNER_FAILURE } else { 0 })
}

fn score_cmd(reports: &[PathBuf], policy: Option<&Path>) -> Result<u8, Failure> {
    let registry = Registry::builtin();
    let policy = load_policy(policy, &registry)?;
    let inputs = reports
        .iter()
        .map(|p| Ok((p.display().to_string(), ReportInput::load(p).map_err(invalid)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let ranking = batch::rank_reports(&inputs, &policy, &registry).map_err(invalid)?;
    print!("{}", batch::to_canonical_json(&ranking));
    Ok(0)
}

/// Accepts whichever of the three file types parses.
fn validate_cmd(path: &Path) -> Result<u8, Failure> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(format!("not JSON: {e}")))?;
    let what = if value.get("expert").is_some() {
        Scenario::from_json(&text).map_err(invalid)?;
        "scenario"
    } else if value.get("scenarios").is_some() {
        ReportInput::load(path).map_err(invalid)?;
        "report"
    } else {
        let registry = Registry::builtin();
        let policy = ScoringPolicy::from_json(&text).map_err(invalid)?;
        policy.validate(&registry).map_err(invalid)?;
        "policy"
    };
    println!("{}: valid {what}", path.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { seed, spec, out } => generate_cmd(*seed, spec, out),
        Command::Run {
            scenarios,
            planner,
            mode,
            policy,
            out,
            jobs,
            retag,
        } => run_cmd(scenarios, planner, mode, policy.as_deref(), out, *jobs, *retag),
        Command::Score { reports, policy } => score_cmd(reports, policy.as_deref()),
        Command::Validate { file } => validate_cmd(file),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
