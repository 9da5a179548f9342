//! Simulation loop: open-loop scoring runs and closed-loop runs with
//! replayed or reactive agents.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{reactive_step, replay_snapshot, AgentRuntimeState};
use crate::controller::{track, PlanHorizonError};
use crate::geometry::{
    resample_trajectory, AgentCategory, EgoState, ObjectSnapshot, Pose2D, Trajectory, TrajectorySample,
};
use crate::map::{Route, SemanticMap};
use crate::scenario::Scenario;
use crate::vehicle::step;
use crate::ValidationError;

/// Object id reserved for the simulated ego in world snapshots.
pub const EGO_ID: &str = "ego";
/// Agents farther than this from the ego are not shown to the planner.
pub const PERCEPTION_RANGE: f64 = 100.0;
/// Route progress at which a closed-loop run ends early.
pub const ROUTE_COMPLETE: f64 = 0.995;
/// Plans may not leave the map bounding box grown by this margin.
pub const PLAN_BOUNDS_MARGIN: f64 = 100.0;
const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    OpenLoop,
    ClosedLoopNonreactive,
    ClosedLoopReactive,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::OpenLoop => "open_loop",
            SimMode::ClosedLoopNonreactive => "closed_loop_nonreactive",
            SimMode::ClosedLoopReactive => "closed_loop_reactive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: SimMode,
    pub dt: f64,
    pub replan_period: f64,
    pub planner_horizon: f64,
    /// Defaults to the expert log's span.
    pub max_duration: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: SimMode::ClosedLoopNonreactive,
            dt: 0.1,
            replan_period: 0.5,
            planner_horizon: 8.0,
            max_duration: None,
        }
    }
}

impl SimConfig {
    pub fn with_mode(mode: SimMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.dt > 0.0 && self.dt <= crate::vehicle::MAX_STEP_DT) {
            return Err(ValidationError::new(format!("dt {} outside (0, 0.2]", self.dt)));
        }
        let ratio = self.replan_period / self.dt;
        if !(ratio >= 1.0 - 1e-9 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(ValidationError::new("replan_period must be a positive multiple of dt"));
        }
        if !(3.0..=8.0).contains(&self.planner_horizon) {
            return Err(ValidationError::new("planner_horizon must lie in [3, 8] s"));
        }
        if let Some(d) = self.max_duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ValidationError::new("max_duration must be positive"));
            }
        }
        Ok(())
    }

    pub fn replan_every(&self) -> usize {
        (self.replan_period / self.dt).round() as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no reply within {0} ms")]
    Timeout(u64),
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("plan ends at {end:.3} s but must reach {needed:.3} s")]
    HorizonShortfall { end: f64, needed: f64 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("planner process failed: {0}")]
    Crashed(String),
    #[error("cannot start planner: {0}")]
    Spawn(String),
    #[error(transparent)]
    PlanHorizon(#[from] PlanHorizonError),
    #[error("{0}")]
    Internal(String),
}

impl PlannerError {
    /// Stable identifier used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            PlannerError::Timeout(_) => "timeout",
            PlannerError::MalformedPlan(_) => "malformed_plan",
            PlannerError::HorizonShortfall { .. } => "horizon_shortfall",
            PlannerError::Protocol(_) => "protocol_violation",
            PlannerError::Crashed(_) => "planner_crash",
            PlannerError::Spawn(_) => "spawn_failed",
            PlannerError::PlanHorizon(_) => "plan_horizon",
            PlannerError::Internal(_) => "internal",
        }
    }
}

/// Everything a planner may look at once per scenario.
pub struct PlannerInit<'a> {
    pub scenario: &'a Scenario,
    pub dt: f64,
    pub horizon: f64,
}

/// Input for one planning cycle.
pub struct PlannerQuery<'a> {
    pub time: f64,
    pub ego: EgoState,
    /// Agents within [`PERCEPTION_RANGE`] of the ego, at `time`.
    pub agents: Vec<ObjectSnapshot>,
    pub route: &'a Route,
    pub goal: Pose2D,
    pub map: &'a SemanticMap,
    pub dt: f64,
    pub horizon: f64,
}

pub trait Planner {
    fn name(&self) -> String;

    fn initialize(&mut self, init: &PlannerInit) -> Result<(), PlannerError>;

    /// Raw plan samples; [`query_planner`] validates them.
    fn plan(&mut self, query: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError>;

    fn shutdown(&mut self) {}
}

/// Queries `planner` and checks the reply: at least two finite samples,
/// strictly increasing times, starting at the query time, reaching the
/// horizon and staying near the map. Off-grid plans are resampled onto the
/// `dt` grid.
pub fn query_planner(planner: &mut dyn Planner, q: &PlannerQuery) -> Result<Trajectory, PlannerError> {
    let samples = planner.plan(q)?;
    if samples.len() < 2 {
        return Err(PlannerError::MalformedPlan(format!("{} samples, need at least 2", samples.len())));
    }
    for (i, s) in samples.iter().enumerate() {
        let finite = s.time.is_finite()
            && s.pose.x.is_finite()
            && s.pose.y.is_finite()
            && s.pose.heading.is_finite()
            && s.velocity.is_none_or(f64::is_finite);
        if !finite {
            return Err(PlannerError::MalformedPlan(format!("sample {i} is not finite")));
        }
        if i > 0 && s.time <= samples[i - 1].time {
            return Err(PlannerError::MalformedPlan(format!("timestamps not increasing at sample {i}")));
        }
    }
    if (samples[0].time - q.time).abs() > TIME_TOLERANCE {
        return Err(PlannerError::MalformedPlan(format!(
            "plan starts at {} but the query is at {}",
            samples[0].time, q.time
        )));
    }
    let needed = q.time + q.horizon;
    let end = samples[samples.len() - 1].time;
    if end < needed - TIME_TOLERANCE {
        return Err(PlannerError::HorizonShortfall { end, needed });
    }
    let bounds = q.map.bounds().expanded(PLAN_BOUNDS_MARGIN);
    if let Some(i) = samples.iter().position(|s| !bounds.contains(s.pose.position())) {
        return Err(PlannerError::MalformedPlan(format!("sample {i} lies outside the map area")));
    }
    let mut samples = samples;
    samples.iter_mut().for_each(|s| s.pose = Pose2D::new(s.pose.x, s.pose.y, s.pose.heading));
    let traj = Trajectory::new(samples).map_err(|e| PlannerError::MalformedPlan(e.message().to_string()))?;
    let on_grid = traj
        .uniform_dt()
        .is_some_and(|d| (d - q.dt).abs() <= 1e-9);
    if on_grid {
        Ok(traj)
    } else {
        resample_trajectory(&traj, q.dt).map_err(|e| PlannerError::MalformedPlan(e.message().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub time: f64,
    pub ego: EgoState,
    /// Every agent present at `time`, sorted by id.
    pub agents: Vec<ObjectSnapshot>,
    pub plan_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub id: usize,
    pub time: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    EndOfLog,
    MaxDuration,
    RouteComplete,
    PlannerFailure { kind: String, message: String },
}

impl Termination {
    fn failure(e: &PlannerError) -> Self {
        Termination::PlannerFailure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::PlannerFailure { .. })
    }

    pub fn as_str(&self) -> &str {
        match self {
            Termination::EndOfLog => "end_of_log",
            Termination::MaxDuration => "max_duration",
            Termination::RouteComplete => "route_complete",
            Termination::PlannerFailure { .. } => "planner_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scenario_id: String,
    pub mode: SimMode,
    pub planner: String,
    pub dt: f64,
    pub steps: Vec<SimStep>,
    pub plans: Vec<PlanRecord>,
    pub termination: Termination,
}

impl SimLog {
    pub fn ego_states(&self) -> Vec<EgoState> {
        self.steps.iter().map(|s| s.ego).collect()
    }

    /// The driven trajectory, or `None` for runs with fewer than two steps.
    pub fn driven_trajectory(&self) -> Option<Trajectory> {
        Trajectory::from_ego_states(&self.ego_states()).ok()
    }

    pub fn failed(&self) -> bool {
        self.termination.is_failure()
    }

    /// SHA-256 over the exact bit patterns of everything in the log.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut f = |x: f64| h.update(x.to_bits().to_le_bytes());
        f(self.dt);
        for s in &self.steps {
            f(s.time);
            let e = &s.ego;
            for v in [e.pose.x, e.pose.y, e.pose.heading, e.velocity, e.acceleration, e.steering_angle] {
                f(v);
            }
            f(s.plan_id as f64);
            for a in &s.agents {
                f(a.id.len() as f64);
                for v in [a.pose.x, a.pose.y, a.pose.heading, a.velocity.x, a.velocity.y, a.length, a.width] {
                    f(v);
                }
            }
        }
        for p in &self.plans {
            f(p.id as f64);
            f(p.time);
            for s in p.trajectory.samples() {
                for v in [s.time, s.pose.x, s.pose.y, s.pose.heading, s.velocity.unwrap_or(f64::NAN)] {
                    f(v);
                }
            }
        }
        h.update(self.scenario_id.as_bytes());
        h.update(self.mode.as_str().as_bytes());
        h.update(self.planner.as_bytes());
        for s in &self.steps {
            for a in &s.agents {
                h.update(a.id.as_bytes());
            }
        }
        h.update(format!("{:?}", self.termination).as_bytes());
        let mut out = String::with_capacity(64);
        for b in h.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

pub fn ego_snapshot(ego: &EgoState) -> ObjectSnapshot {
    ObjectSnapshot {
        id: EGO_ID.to_string(),
        category: AgentCategory::Vehicle,
        pose: ego.footprint().center,
        velocity: ego.velocity_vector(),
        length: ego.dims.length,
        width: ego.dims.width,
    }
}

fn visible(ego: &EgoState, agents: &[ObjectSnapshot]) -> Vec<ObjectSnapshot> {
    let c = ego.center();
    agents
        .iter()
        .filter(|a| a.pose.position().dist(c) <= PERCEPTION_RANGE)
        .cloned()
        .collect()
}

fn replayed(scenario: &Scenario, t: f64) -> Vec<ObjectSnapshot> {
    let mut out: Vec<_> = scenario.agents.iter().filter_map(|tr| replay_snapshot(tr, t).ok()).collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

struct Session<'a> {
    scenario: &'a Scenario,
    planner: &'a mut dyn Planner,
    config: SimConfig,
    plans: Vec<PlanRecord>,
}

impl Session<'_> {
    fn query(&mut self, time: f64, ego: EgoState, agents: &[ObjectSnapshot]) -> Result<usize, PlannerError> {
        let q = PlannerQuery {
            time,
            ego,
            agents: visible(&ego, agents),
            route: &self.scenario.route,
            goal: self.scenario.file.goal,
            map: &self.scenario.map,
            dt: self.config.dt,
            horizon: self.config.planner_horizon,
        };
        let trajectory = query_planner(self.planner, &q)?;
        let id = self.plans.len();
        self.plans.push(PlanRecord { id, time, trajectory });
        Ok(id)
    }
}

fn start(scenario: &Scenario, planner: &mut dyn Planner, config: &SimConfig) -> Result<(), PlannerError> {
    config.validate().map_err(|e| PlannerError::Internal(e.message().to_string()))?;
    planner.initialize(&PlannerInit {
        scenario,
        dt: config.dt,
        horizon: config.planner_horizon,
    })
}

fn finish(
    scenario: &Scenario,
    planner: &mut dyn Planner,
    config: &SimConfig,
    steps: Vec<SimStep>,
    plans: Vec<PlanRecord>,
    termination: Termination,
) -> SimLog {
    planner.shutdown();
    SimLog {
        scenario_id: scenario.id().to_string(),
        mode: config.mode,
        planner: planner.name(),
        dt: config.dt,
        steps,
        plans,
        termination,
    }
}

fn step_count(scenario: &Scenario, config: &SimConfig) -> usize {
    let span = scenario.end_time() - scenario.start_time();
    let d = config.max_duration.map_or(span, |d| d.min(span));
    (d / config.dt + 1e-9).floor() as usize
}

/// Open-loop run: the planner is queried from the expert's states and the
/// world follows the log regardless of what it returns.
pub fn run_open_loop(scenario: &Scenario, planner: &mut dyn Planner, config: &SimConfig) -> SimLog {
    let config = SimConfig {
        mode: SimMode::OpenLoop,
        ..*config
    };
    if let Err(e) = start(scenario, planner, &config) {
        return finish(scenario, planner, &config, vec![], vec![], Termination::failure(&e));
    }
    let n = step_count(scenario, &config).min(scenario.expert.len() - 1);
    let every = config.replan_every();
    let mut session = Session {
        scenario,
        planner,
        config,
        plans: vec![],
    };
    let mut steps = Vec::with_capacity(n + 1);
    let mut active = 0;
    for i in 0..=n {
        let ego = scenario.expert[i];
        let agents = replayed(scenario, ego.time);
        if i % every == 0 && i < n {
            match session.query(ego.time, ego, &agents) {
                Ok(id) => active = id,
                Err(e) => {
                    let plans = std::mem::take(&mut session.plans);
                    return finish(scenario, session.planner, &config, steps, plans, Termination::failure(&e));
                }
            }
        }
        steps.push(SimStep {
            time: ego.time,
            ego,
            agents,
            plan_id: active,
        });
    }
    let plans = std::mem::take(&mut session.plans);
    finish(scenario, session.planner, &config, steps, plans, Termination::EndOfLog)
}

enum AgentSlot {
    /// Follows the log: not a vehicle, not on a lane, or not yet observed.
    Replay,
    Reactive(AgentRuntimeState),
    Gone,
}

struct ReactiveWorld {
    slots: Vec<AgentSlot>,
}

impl ReactiveWorld {
    fn new(scenario: &Scenario) -> Self {
        Self {
            slots: scenario.agents.iter().map(|_| AgentSlot::Replay).collect(),
        }
    }

    /// Switches vehicles to the IDM model as soon as their track has started.
    fn activate(&mut self, scenario: &Scenario, t: f64) {
        let idm = scenario.idm();
        for (slot, tr) in self.slots.iter_mut().zip(&scenario.agents) {
            if matches!(slot, AgentSlot::Replay)
                && tr.category == AgentCategory::Vehicle
                && t >= tr.start_time() - TIME_TOLERANCE
                && t <= tr.end_time()
            {
                if let Some(a) = AgentRuntimeState::from_track(tr, t, &scenario.map, &idm) {
                    *slot = AgentSlot::Reactive(a);
                }
            }
        }
    }

    fn snapshot(&self, scenario: &Scenario, t: f64) -> Vec<ObjectSnapshot> {
        let mut out: Vec<_> = self
            .slots
            .iter()
            .zip(&scenario.agents)
            .filter_map(|(slot, tr)| match slot {
                AgentSlot::Replay => replay_snapshot(tr, t).ok(),
                AgentSlot::Reactive(a) => Some(a.snapshot()),
                AgentSlot::Gone => None,
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Jacobi update: every agent reads the same previous-step world.
    fn advance(&mut self, scenario: &Scenario, world: &[ObjectSnapshot], dt: f64) {
        let idm = scenario.idm();
        for slot in &mut self.slots {
            if let AgentSlot::Reactive(a) = slot {
                *slot = match reactive_step(a, world, &scenario.map, dt, &idm) {
                    Some(next) => AgentSlot::Reactive(next),
                    None => AgentSlot::Gone,
                };
            }
        }
    }
}

/// Closed-loop run: the planner's output drives the ego through the
/// controller and vehicle model. Collisions and off-road driving do not stop
/// the run.
pub fn run_closed_loop(scenario: &Scenario, planner: &mut dyn Planner, config: &SimConfig, reactive: bool) -> SimLog {
    let config = SimConfig {
        mode: if reactive {
            SimMode::ClosedLoopReactive
        } else {
            SimMode::ClosedLoopNonreactive
        },
        ..*config
    };
    if let Err(e) = start(scenario, planner, &config) {
        return finish(scenario, planner, &config, vec![], vec![], Termination::failure(&e));
    }
    let n = step_count(scenario, &config);
    let every = config.replan_every();
    let t0 = scenario.start_time();
    let gains = scenario.gains();
    let limits = scenario.limits();
    let mut world = reactive.then(|| ReactiveWorld::new(scenario));
    let mut session = Session {
        scenario,
        planner,
        config,
        plans: vec![],
    };
    let mut steps = Vec::with_capacity(n + 1);
    let mut ego = scenario.expert[0];
    let mut active = 0;
    let fail = |session: &mut Session, steps: Vec<SimStep>, e: PlannerError| {
        let plans = std::mem::take(&mut session.plans);
        finish(scenario, session.planner, &config, steps, plans, Termination::failure(&e))
    };
    for i in 0..=n {
        let t = t0 + i as f64 * config.dt;
        ego.time = t;
        let agents = match world.as_mut() {
            Some(w) => {
                w.activate(scenario, t);
                w.snapshot(scenario, t)
            }
            None => replayed(scenario, t),
        };
        if i % every == 0 && i < n {
            match session.query(t, ego, &agents) {
                Ok(id) => active = id,
                Err(e) => return fail(&mut session, steps, e),
            }
        }
        steps.push(SimStep {
            time: t,
            ego,
            agents: agents.clone(),
            plan_id: active,
        });
        if i == n {
            break;
        }
        if scenario.route.progress(ego.pose.position()) >= ROUTE_COMPLETE {
            let plans = std::mem::take(&mut session.plans);
            return finish(scenario, session.planner, &config, steps, plans, Termination::RouteComplete);
        }
        let plan = &session.plans[active].trajectory;
        let u = match track(&ego, plan, &gains, &limits, config.dt) {
            Ok(u) => u,
            Err(e) => return fail(&mut session, steps, e.into()),
        };
        if let Some(w) = world.as_mut() {
            let mut everyone = agents;
            everyone.push(ego_snapshot(&ego));
            w.advance(scenario, &everyone, config.dt);
        }
        ego = step(&ego, u, config.dt, &limits).expect("dt validated");
    }
    let plans = std::mem::take(&mut session.plans);
    let span = scenario.end_time() - scenario.start_time();
    let termination = if config.max_duration.is_some_and(|d| d < span) {
        Termination::MaxDuration
    } else {
        Termination::EndOfLog
    };
    finish(scenario, session.planner, &config, steps, plans, termination)
}

/// Runs `scenario` in the mode named by `config`.
pub fn run(scenario: &Scenario, planner: &mut dyn Planner, config: &SimConfig) -> SimLog {
    match config.mode {
        SimMode::OpenLoop => run_open_loop(scenario, planner, config),
        SimMode::ClosedLoopNonreactive => run_closed_loop(scenario, planner, config, false),
        SimMode::ClosedLoopReactive => run_closed_loop(scenario, planner, config, true),
    }
}
