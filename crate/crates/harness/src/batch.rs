//! Batch evaluation of one planner over a directory of scenarios.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use planbench_core::metrics::{evaluate, ComfortLimits, MetricSet};
use planbench_core::planners::{BrakeToStopPlanner, ConstantVelocityPlanner, IdmRouteFollower, LogReplayPlanner};
use planbench_core::protocol::ExternalPlanner;
use planbench_core::scenario::Scenario;
use planbench_core::scoring::{aggregate, PolicyKind, Registry, ScenarioMetrics, ScoreReport, ScoringError, ScoringPolicy};
use planbench_core::sim::{run, Planner, PlannerError, SimConfig, SimLog, SimMode, Termination};
use planbench_core::tagging::{
    decision_agreement, lane_change_metrics, tag_scenario, vru_interaction_metrics, ScenarioTag, TagKind,
};

/// Version of the report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("no scenario files in {0}")]
    Empty(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid scenario {path}: {message}")]
    Scenario { path: String, message: String },
    #[error("duplicate scenario id {0}")]
    DuplicateId(String),
    #[error("invalid planner spec {0:?}: expected builtin:NAME or exec:COMMAND")]
    PlannerSpec(String),
    #[error("invalid report {path}: {message}")]
    Report { path: String, message: String },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    LogReplay,
    ConstantVelocity,
    IdmRouteFollower,
    BrakeToStop,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::LogReplay,
        Builtin::ConstantVelocity,
        Builtin::IdmRouteFollower,
        Builtin::BrakeToStop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Builtin::LogReplay => "log_replay",
            Builtin::ConstantVelocity => "constant_velocity",
            Builtin::IdmRouteFollower => "idm_route_follower",
            Builtin::BrakeToStop => "brake_to_stop",
        }
    }

    pub fn planner(self) -> Box<dyn Planner> {
        match self {
            Builtin::LogReplay => Box::new(LogReplayPlanner::default()),
            Builtin::ConstantVelocity => Box::new(ConstantVelocityPlanner),
            Builtin::IdmRouteFollower => Box::new(IdmRouteFollower::default()),
            Builtin::BrakeToStop => Box::new(BrakeToStopPlanner::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannerSpec {
    Builtin(Builtin),
    /// Command line of an external planner speaking the stdio protocol.
    Exec(String),
}

impl PlannerSpec {
    pub fn build(&self, timeout_ms: u64) -> Result<Box<dyn Planner>, PlannerError> {
        match self {
            PlannerSpec::Builtin(b) => Ok(b.planner()),
            PlannerSpec::Exec(cmd) => Ok(Box::new(ExternalPlanner::from_command_line(cmd, timeout_ms)?)),
        }
    }
}

impl std::fmt::Display for PlannerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlannerSpec::Builtin(b) => write!(f, "builtin:{}", b.as_str()),
            PlannerSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
        }
    }
}

impl FromStr for PlannerSpec {
    type Err = BatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BatchError::PlannerSpec(s.to_string());
        if let Some(name) = s.strip_prefix("builtin:") {
            Builtin::ALL
                .into_iter()
                .find(|b| b.as_str() == name)
                .map(PlannerSpec::Builtin)
                .ok_or_else(bad)
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                Err(bad())
            } else {
                Ok(PlannerSpec::Exec(cmd.trim().to_string()))
            }
        } else {
            Err(bad())
        }
    }
}

/// Parses the CLI spelling of a simulation mode.
pub fn parse_mode(s: &str) -> Option<SimMode> {
    match s {
        "open" => Some(SimMode::OpenLoop),
        "closed" => Some(SimMode::ClosedLoopNonreactive),
        "closed-reactive" => Some(SimMode::ClosedLoopReactive),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub planner: PlannerSpec,
    pub sim: SimConfig,
    pub comfort: ComfortLimits,
    pub policy: ScoringPolicy,
    pub registry: Registry,
    pub jobs: usize,
    /// Recompute tags from the expert log instead of trusting the file.
    pub retag: bool,
    pub timeout_ms: u64,
}

impl BatchConfig {
    pub fn new(planner: PlannerSpec, mode: SimMode) -> Self {
        Self {
            planner,
            sim: SimConfig::with_mode(mode),
            comfort: ComfortLimits::default(),
            policy: ScoringPolicy::default(),
            registry: Registry::builtin(),
            jobs: 1,
            retag: false,
            timeout_ms: planbench_core::protocol::DEFAULT_TIMEOUT_MS,
        }
    }
}

/// A scenario together with the file it came from.
pub struct LoadedScenario {
    pub path: PathBuf,
    pub scenario: Scenario,
}

/// Loads every `*.json` file of `dir`, ordered by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<LoadedScenario>, BatchError> {
    let read_err = |e: std::io::Error| BatchError::Read {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(read_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(BatchError::Empty(dir.display().to_string()));
    }
    let mut out: Vec<LoadedScenario> = Vec::with_capacity(paths.len());
    for path in paths {
        let scenario = Scenario::load(&path).map_err(|e| BatchError::Scenario {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if out.iter().any(|s| s.scenario.id() == scenario.id()) {
            return Err(BatchError::DuplicateId(scenario.id().to_string()));
        }
        out.push(LoadedScenario { path, scenario });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub kind: TagKind,
    pub t_start: f64,
    pub t_end: f64,
    pub values: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: String,
    pub kind: String,
    pub termination: Termination,
    pub failed: bool,
    pub metrics: MetricSet,
    /// Mean normalized similarity metric, when any is defined.
    pub similarity_score: Option<f64>,
    pub tags: Vec<ScenarioTag>,
    pub tag_metrics: Vec<TagMetrics>,
    /// Digest of the full simulation log.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub planner: String,
    pub mode: SimMode,
    pub sim: SimConfig,
    pub comfort: ComfortLimits,
    pub registry_version: String,
    pub harness_version: String,
    pub retag: bool,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub policy: ScoringPolicy,
    pub score: ScoreReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub scenarios: Vec<ScenarioResult>,
    pub aggregate: Aggregate,
}

/// The part of a report file needed to re-score it.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportInput {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub scenarios: Vec<ScenarioResult>,
}

/// Serializes with sorted keys and shortest round-trip floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report types serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("values serialize");
    s.push('\n');
    s
}

impl Report {
    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn any_failed(&self) -> bool {
        self.scenarios.iter().any(|s| s.failed)
    }
}

impl ReportInput {
    pub fn load(path: &Path) -> Result<Self, BatchError> {
        let err = |message: String| BatchError::Report {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let r: ReportInput = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(err(format!("unsupported schema version {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn scenario_metrics(&self) -> Vec<ScenarioMetrics> {
        scenario_metrics(&self.scenarios)
    }
}

fn scenario_metrics(results: &[ScenarioResult]) -> Vec<ScenarioMetrics> {
    results
        .iter()
        .map(|r| ScenarioMetrics {
            scenario_id: r.id.clone(),
            failed: r.failed,
            metrics: r.metrics.clone(),
        })
        .collect()
}

fn tag_values(log: &SimLog, sc: &Scenario, tag: &ScenarioTag) -> Option<Value> {
    let map = &sc.map;
    let v = match tag.kind {
        TagKind::LaneChange | TagKind::Merge => serde_json::to_value(lane_change_metrics(log, tag, map).ok()?).ok()?,
        TagKind::PedestrianInteraction | TagKind::CyclistInteraction => {
            let passes = vru_interaction_metrics(log, tag, map).ok()?;
            let decision = if tag.kind == TagKind::PedestrianInteraction {
                decision_agreement(log, &sc.expert, tag, &sc.agents, map).ok().flatten()
            } else {
                None
            };
            json!({
                "passes": passes.len(),
                "min_clearance": passes.iter().map(|p| p.clearance).reduce(f64::min),
                "max_relative_speed": passes.iter().map(|p| p.relative_speed).reduce(f64::max),
                "decision": decision,
            })
        }
        TagKind::TurnLeftUnprotected => {
            json!({ "decision": decision_agreement(log, &sc.expert, tag, &sc.agents, map).ok().flatten() })
        }
        _ => return None,
    };
    Some(v)
}

/// Runs `sc` and computes everything the report holds for it.
pub fn evaluate_scenario(sc: &Scenario, config: &BatchConfig) -> ScenarioResult {
    let log = match config.planner.build(config.timeout_ms) {
        Ok(mut planner) => run(sc, planner.as_mut(), &config.sim),
        Err(e) => SimLog {
            scenario_id: sc.id().to_string(),
            mode: config.sim.mode,
            planner: config.planner.to_string(),
            dt: config.sim.dt,
            steps: vec![],
            plans: vec![],
            termination: Termination::PlannerFailure {
                kind: e.kind().to_string(),
                message: e.to_string(),
            },
        },
    };
    let metrics = if log.steps.len() >= 2 {
        evaluate(&log, sc, &config.comfort)
    } else {
        MetricSet::default()
    };
    let tags = if config.retag {
        tag_scenario(&sc.expert, &sc.agents, &sc.map, sc.left_hand_traffic())
    } else {
        sc.tags().to_vec()
    };
    let tag_metrics = if log.steps.len() >= 2 {
        tags.iter()
            .filter_map(|t| {
                tag_values(&log, sc, t).map(|values| TagMetrics {
                    kind: t.kind,
                    t_start: t.t_start,
                    t_end: t.t_end,
                    values,
                })
            })
            .collect()
    } else {
        vec![]
    };
    ScenarioResult {
        id: sc.id().to_string(),
        kind: sc.file.kind.clone(),
        failed: log.failed(),
        similarity_score: config.registry.similarity_score(&metrics),
        termination: log.termination.clone(),
        metrics,
        tags,
        tag_metrics,
        digest: log.digest(),
    }
}

/// Progress callback: (finished, total, scenario id, failed).
pub type Progress<'a> = &'a mut dyn FnMut(usize, usize, &str, bool);

/// Runs every scenario on a pool of `config.jobs` workers. The result does
/// not depend on the number of workers.
pub fn run_batch(scenarios: &[Scenario], config: &BatchConfig, progress: Progress) -> Result<Report, BatchError> {
    config.policy.validate(&config.registry)?;
    let jobs = config.jobs.clamp(1, scenarios.len().max(1));
    let next = AtomicUsize::new(0);
    let mut results: Vec<ScenarioResult> = Vec::with_capacity(scenarios.len());
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sc) = scenarios.get(i) else { break };
                if tx.send(evaluate_scenario(sc, config)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for r in rx {
            progress(results.len() + 1, scenarios.len(), &r.id, r.failed);
            results.push(r);
        }
    });
    results.sort_by(|a, b| a.id.cmp(&b.id));
    finish(results, config)
}

fn finish(scenarios: Vec<ScenarioResult>, config: &BatchConfig) -> Result<Report, BatchError> {
    let score = aggregate(&scenario_metrics(&scenarios), &config.policy, &config.registry)?;
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config: ConfigEcho {
            planner: config.planner.to_string(),
            mode: config.sim.mode,
            sim: config.sim,
            comfort: config.comfort,
            registry_version: config.registry.version.clone(),
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            retag: config.retag,
            timeout_ms: config.timeout_ms,
        },
        scenarios,
        aggregate: Aggregate {
            policy: config.policy.clone(),
            score,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RankEntry {
    pub rank: usize,
    pub report: String,
    pub planner: String,
    pub mode: SimMode,
    pub score: ScoreReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ranking {
    pub policy: PolicyKind,
    pub entries: Vec<RankEntry>,
}

/// Re-scores existing reports under `policy` and ranks them best first.
/// Ties keep the input order.
pub fn rank_reports(
    reports: &[(String, ReportInput)],
    policy: &ScoringPolicy,
    registry: &Registry,
) -> Result<Ranking, BatchError> {
    let mut scored: Vec<(String, &ReportInput, ScoreReport)> = reports
        .iter()
        .map(|(name, r)| Ok((name.clone(), r, aggregate(&r.scenario_metrics(), policy, registry)?)))
        .collect::<Result<_, BatchError>>()?;
    scored.sort_by(|a, b| b.2.compare(&a.2));
    Ok(Ranking {
        policy: policy.kind,
        entries: scored
            .into_iter()
            .enumerate()
            .map(|(i, (report, r, score))| RankEntry {
                rank: i + 1,
                report,
                planner: r.config.planner.clone(),
                mode: r.config.mode,
                score,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planner_specs_parse_and_print() {
        for b in Builtin::ALL {
            let s = format!("builtin:{}", b.as_str());
            let spec: PlannerSpec = s.parse().unwrap();
            assert_eq!(spec, PlannerSpec::Builtin(b));
            assert_eq!(spec.to_string(), s);
        }
        let spec: PlannerSpec = "exec:./plan --fast".parse().unwrap();
        assert_eq!(spec, PlannerSpec::Exec("./plan --fast".into()));
        for bad in ["builtin:magic", "exec:  ", "log_replay", ""] {
            assert!(bad.parse::<PlannerSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn modes_parse() {
        assert_eq!(parse_mode("open"), Some(SimMode::OpenLoop));
        assert_eq!(parse_mode("closed"), Some(SimMode::ClosedLoopNonreactive));
        assert_eq!(parse_mode("closed-reactive"), Some(SimMode::ClosedLoopReactive));
        assert_eq!(parse_mode("reactive"), None);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v = json!({"b": 1, "a": {"d": 0.1, "c": 2}});
        assert_eq!(to_canonical_json(&v), "{\n  \"a\": {\n    \"c\": 2,\n    \"d\": 0.1\n  },\n  \"b\": 1\n}\n");
    }

    #[test]
    fn spawn_failure_is_recorded_not_raised() {
        let sc = Scenario::from_file(crate::generate::regression("follower_fixture", crate::generate::City::Boston).unwrap()).unwrap();
        let config = BatchConfig::new(PlannerSpec::Exec("/nonexistent/planner".into()), SimMode::ClosedLoopNonreactive);
        let r = evaluate_scenario(&sc, &config);
        assert!(r.failed);
        assert!(matches!(r.termination, Termination::PlannerFailure { ref kind, .. } if kind == "spawn_failed"));
    }
}
