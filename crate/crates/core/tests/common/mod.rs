#![allow(dead_code)]
pub mod oracles;

use planbench_core::geometry::{AgentCategory, AgentState, EgoState, Point2, Pose2D, TrackedObject, VehicleDims};
use planbench_core::map::{LaneId, SemanticMap};
use planbench_core::scenario::{LaneSpec, MapSpec, StopLineSpec};
use planbench_core::sim::{SimLog, SimMode, SimStep, Termination};
use planbench_core::tagging::agents_at;

pub const DT: f64 = 0.1;

pub fn lane(id: &str, pts: &[[f64; 2]], left: Option<&str>, right: Option<&str>, succ: &[&str]) -> LaneSpec {
    LaneSpec {
        id: LaneId::new(id),
        centerline: pts.to_vec(),
        speed_limit: 15.0,
        successors: succ.iter().map(|s| LaneId::new(*s)).collect(),
        left_neighbor: left.map(LaneId::new),
        right_neighbor: right.map(LaneId::new),
    }
}

/// Two same-direction lanes along +x: `a` at y = 0, `b` at y = 3.5, 300 m long,
/// plus a crosswalk at x in [100, 104].
pub fn two_lane_spec() -> MapSpec {
    MapSpec {
        lanes: vec![
            lane("a", &[[0.0, 0.0], [300.0, 0.0]], Some("b"), None, &[]),
            lane("b", &[[0.0, 3.5], [300.0, 3.5]], None, Some("a"), &[]),
        ],
        driveable_area: vec![vec![[-10.0, -1.75], [310.0, -1.75], [310.0, 5.25], [-10.0, 5.25]]],
        crosswalks: vec![vec![[100.0, -1.75], [104.0, -1.75], [104.0, 5.25], [100.0, 5.25]]],
        stop_lines: vec![],
    }
}

pub fn two_lane_map() -> SemanticMap {
    two_lane_spec().build().unwrap()
}

pub fn with_stop_line(mut spec: MapSpec, x: f64) -> MapSpec {
    spec.stop_lines.push(StopLineSpec {
        start: [x, -1.75],
        end: [x, 1.75],
        lane: LaneId::new("a"),
    });
    spec
}

/// Ego states from a rear-axle position function sampled on the grid.
pub fn ego_path(n: usize, f: impl Fn(f64) -> (f64, f64, f64, f64)) -> Vec<EgoState> {
    (0..n)
        .map(|i| {
            let t = i as f64 * DT;
            let (x, y, heading, v) = f(t);
            EgoState {
                time: t,
                pose: Pose2D::new(x, y, heading),
                velocity: v,
                acceleration: 0.0,
                steering_angle: 0.0,
                dims: VehicleDims::default(),
            }
        })
        .collect()
}

pub fn track(id: &str, category: AgentCategory, n: usize, f: impl Fn(f64) -> (f64, f64, f64, f64, f64)) -> TrackedObject {
    let (length, width) = match category {
        AgentCategory::Vehicle => (4.6, 1.9),
        AgentCategory::Pedestrian => (0.6, 0.6),
        AgentCategory::Cyclist => (1.8, 0.6),
    };
    TrackedObject {
        id: id.into(),
        category,
        length,
        width,
        states: (0..n)
            .map(|i| {
                let t = i as f64 * DT;
                let (x, y, heading, vx, vy) = f(t);
                AgentState {
                    time: t,
                    pose: Pose2D::new(x, y, heading),
                    velocity: Point2::new(vx, vy),
                }
            })
            .collect(),
    }
}

/// A log whose ego follows `ego` and whose agents replay `tracks`.
pub fn log_of(ego: &[EgoState], tracks: &[TrackedObject]) -> SimLog {
    SimLog {
        scenario_id: "fixture".into(),
        mode: SimMode::ClosedLoopNonreactive,
        planner: "fixture".into(),
        dt: DT,
        steps: ego
            .iter()
            .map(|e| SimStep {
                time: e.time,
                ego: *e,
                agents: agents_at(tracks, e.time),
                plan_id: 0,
            })
            .collect(),
        plans: vec![],
        termination: Termination::EndOfLog,
    }
}

use planbench_core::scenario::{AgentRecord, EgoRecord, EgoSpec, Scenario, ScenarioFile, ScenarioMetadata, TrackSpec, GRID_DT, SCHEMA_VERSION};
use planbench_core::vehicle::ModelLimits;

pub fn file_of(id: &str, map: MapSpec, expert: &[EgoState], tracks: &[TrackedObject], goal: Pose2D) -> ScenarioFile {
    ScenarioFile {
        schema_version: SCHEMA_VERSION,
        id: id.into(),
        kind: "fixture".into(),
        metadata: ScenarioMetadata {
            city: "default".into(),
            seed: 0,
            left_hand_traffic: false,
            description: String::new(),
        },
        dt: GRID_DT,
        map,
        ego: EgoSpec {
            dims: VehicleDims::default(),
            limits: ModelLimits::default(),
            gains: None,
        },
        expert: expert
            .iter()
            .map(|e| EgoRecord {
                t: e.time,
                x: e.pose.x,
                y: e.pose.y,
                heading: e.pose.heading,
                v: e.velocity,
                a: e.acceleration,
                steer: e.steering_angle,
            })
            .collect(),
        agents: tracks
            .iter()
            .map(|t| TrackSpec {
                id: t.id.clone(),
                category: t.category,
                length: t.length,
                width: t.width,
                states: t
                    .states
                    .iter()
                    .map(|s| AgentRecord {
                        t: s.time,
                        x: s.pose.x,
                        y: s.pose.y,
                        heading: s.pose.heading,
                        vx: s.velocity.x,
                        vy: s.velocity.y,
                    })
                    .collect(),
            })
            .collect(),
        goal,
        route: None,
        idm: None,
        tags: vec![],
    }
}

/// 15 s at 10 m/s along lane `a` of the two-lane road.
pub fn straight_scenario() -> Scenario {
    let expert = ego_path(151, |t| (20.0 + 10.0 * t, 0.0, 0.0, 10.0));
    Scenario::from_file(file_of("straight", two_lane_spec(), &expert, &[], Pose2D::new(170.0, 0.0, 0.0))).unwrap()
}

pub const CURVE_RADIUS: f64 = 40.0;

/// A single lane on a counter-clockwise arc of radius 40 m centered at
/// (0, 40), starting at the origin heading +x, sampled every 1 m.
pub fn curve_spec() -> MapSpec {
    let r = CURVE_RADIUS;
    let n = (r * std::f64::consts::PI * 1.2) as usize;
    let at = |s: f64, off: f64| {
        let th = s / r;
        [(r - off) * th.sin(), r - (r - off) * th.cos()]
    };
    let center: Vec<[f64; 2]> = (0..=n).map(|i| at(i as f64, 0.0)).collect();
    let mut area: Vec<[f64; 2]> = (0..=n).map(|i| at(i as f64, -2.0)).collect();
    area.extend((0..=n).rev().map(|i| at(i as f64, 2.0)));
    MapSpec {
        lanes: vec![lane("arc", &center, None, None, &[])],
        driveable_area: vec![area],
        crosswalks: vec![],
        stop_lines: vec![],
    }
}

/// Exact steady-state circular motion of the bicycle model at 8 m/s.
pub fn curve_expert(n: usize) -> Vec<EgoState> {
    let (r, v) = (CURVE_RADIUS, 8.0);
    let dims = VehicleDims::default();
    let mut out = ego_path(n, |t| {
        let th = v * t / r;
        (r * th.sin(), r - r * th.cos(), th, v)
    });
    for e in &mut out {
        e.steering_angle = (dims.wheelbase / r).atan();
    }
    out
}

pub fn curve_scenario() -> Scenario {
    let expert = curve_expert(151);
    let last = expert[expert.len() - 1].pose;
    Scenario::from_file(file_of("curve", curve_spec(), &expert, &[], last)).unwrap()
}
