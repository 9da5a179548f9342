//! Procedural scenario generation.
//!
//! Each scenario kind places agents around a synthetic expert so that the
//! interaction the kind is named after actually happens. Generation is
//! deterministic in `(seed, kind, index)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use planbench_core::agents::IdmParams;
use planbench_core::controller::ControllerGains;
use planbench_core::geometry::{segment_intersection, AgentCategory, Point2, Pose2D, VehicleDims};
use planbench_core::map::{LaneId, Polyline};
use planbench_core::scenario::{
    EgoRecord, EgoSpec, MapSpec, RigidTransform, Scenario, ScenarioError, ScenarioFile, ScenarioMetadata, TrackSpec,
    GRID_DT, SCHEMA_VERSION,
};
use planbench_core::tagging::tag_scenario;
use planbench_core::vehicle::ModelLimits;

use crate::expert::{drive, to_tracked, BrakePulse, ExpertPlan, Hold, Profile, Release};
use crate::roads::{self, backward_id, forward_id, p, smoothstep, Movement, LANE_WIDTH};

/// Generated kinds: one per scenario tag plus three plain driving kinds.
pub const KINDS: [&str; 13] = [
    "straight",
    "curve",
    "follow",
    "lane_change",
    "merge",
    "turn_left_unprotected",
    "turn_left_protected",
    "turn_right",
    "pedestrian_interaction",
    "cyclist_interaction",
    "close_proximity",
    "high_acceleration",
    "stop_controlled_intersection",
];

/// Fixed scenarios written by every generation run.
pub const REGRESSION: [&str; 6] = [
    "intersection_fork",
    "dual_merge",
    "overtake",
    "overtake_fast_oncoming",
    "follower_fixture",
    "curve_fixture",
];

/// Speed added to the oncoming car in the fast overtake variant.
pub const ONCOMING_SPEEDUP: f64 = 2.0;

const ROAD_LENGTH: f64 = 340.0;
const CAR_LENGTH: f64 = 4.6;
const CAR_WIDTH: f64 = 1.9;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("unsupported scenario kind {0:?}")]
    UnknownKind(String),
    #[error("invalid generation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// City presets. Only road layout and traffic side differ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum City {
    #[default]
    Boston,
    Pittsburgh,
    /// Four lanes per direction on straight roads.
    LasVegas,
    /// Left-hand traffic: every scenario is mirrored.
    Singapore,
}

impl City {
    pub fn label(self) -> &'static str {
        match self {
            City::Boston => "boston",
            City::Pittsburgh => "pittsburgh",
            City::LasVegas => "las_vegas",
            City::Singapore => "singapore",
        }
    }

    fn lanes(self) -> (usize, usize) {
        match self {
            City::LasVegas => (4, 4),
            _ => (2, 2),
        }
    }

    pub fn left_hand_traffic(self) -> bool {
        self == City::Singapore
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    /// Number of scenarios per kind.
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub city: City,
}

impl GenerateSpec {
    pub fn from_json(text: &str) -> Result<Self, GenerateError> {
        let spec: GenerateSpec = serde_json::from_str(text).map_err(|e| GenerateError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        match self.counts.keys().find(|k| !KINDS.contains(&k.as_str())) {
            Some(k) => Err(GenerateError::UnknownKind(k.clone())),
            None => Ok(()),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one scenario, independent of how many others are generated.
pub fn scenario_seed(seed: u64, kind: usize, index: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ kind as u64) ^ index as u64)
}

/// Everything a kind builder decides; the expert is driven afterwards.
struct Draft {
    map: MapSpec,
    agents: Vec<TrackSpec>,
    plan: ExpertPlan,
    route: Vec<LaneId>,
    description: String,
}

struct Ctx {
    rng: ChaCha8Rng,
    forward: usize,
    backward: usize,
}

impl Ctx {
    fn new(seed: u64, city: City) -> Self {
        let (forward, backward) = city.lanes();
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            forward,
            backward,
        }
    }

    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    fn pick(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    fn car(&mut self) -> (f64, f64) {
        (self.u(4.2, 5.0), self.u(1.8, 2.0))
    }
}

fn dims() -> VehicleDims {
    VehicleDims::default()
}

fn front_overhang() -> f64 {
    let d = dims();
    d.rear_axle_to_center + d.length / 2.0
}

fn rear_overhang() -> f64 {
    let d = dims();
    d.length / 2.0 - d.rear_axle_to_center
}

fn polyline(points: Vec<Point2>) -> Polyline {
    let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
    for q in points {
        if pts.last().is_none_or(|last| last.dist(q) > 1e-6) {
            pts.push(q);
        }
    }
    Polyline::new(pts).expect("generated paths have at least two distinct points")
}

/// Concatenated centerlines of `ids`.
fn lane_path(map: &MapSpec, ids: &[&str]) -> Polyline {
    let pts = ids
        .iter()
        .flat_map(|id| {
            let lane = map.lanes.iter().find(|l| l.id.as_str() == *id).expect("lane exists");
            lane.centerline.iter().map(|c| p(c[0], c[1])).collect::<Vec<_>>()
        })
        .collect();
    polyline(pts)
}

/// Path along +x with lateral position `y(x)`, one point per metre.
fn lateral_path(x0: f64, x1: f64, y: impl Fn(f64) -> f64) -> Polyline {
    let n = (x1 - x0).ceil() as usize;
    polyline((0..=n).map(|k| x0 + (x1 - x0) * k as f64 / n as f64).map(|x| p(x, y(x))).collect())
}

fn lane_y(k: usize) -> f64 {
    k as f64 * LANE_WIDTH
}

fn ids(v: &[String]) -> Vec<LaneId> {
    v.iter().map(LaneId::new).collect()
}

/// Arc lengths along `a` and `b` of their first crossing.
fn first_crossing(a: &Polyline, b: &Polyline) -> Option<(f64, f64)> {
    let (pa, pb) = (a.points(), b.points());
    let mut sa = 0.0;
    for i in 1..pa.len() {
        let mut sb = 0.0;
        for j in 1..pb.len() {
            if let Some(x) = segment_intersection(pa[i - 1], pa[i], pb[j - 1], pb[j]) {
                return Some((sa + x.dist(pa[i - 1]), sb + x.dist(pb[j - 1])));
            }
            sb += pb[j].dist(pb[j - 1]);
        }
        sa += pa[i].dist(pa[i - 1]);
    }
    None
}

/// First logged time at which the rear axle passes arc length `s` of `path`.
fn time_at(log: &[EgoRecord], path: &Polyline, s: f64) -> f64 {
    log.iter()
        .find(|r| path.project(Point2::new(r.x, r.y)).arc_length >= s)
        .or(log.last())
        .map(|r| r.t)
        .expect("non-empty log")
}

fn free_drive(plan: &ExpertPlan) -> Vec<EgoRecord> {
    drive(
        plan,
        &[],
        dims(),
        &ModelLimits::default(),
        &ControllerGains::default(),
        &IdmParams::default(),
    )
}

fn vehicle(id: &str, (length, width): (f64, f64), path: &Polyline, s0: f64, speed: &Profile, duration: f64) -> TrackSpec {
    crate::expert::scripted_track(id, AgentCategory::Vehicle, length, width, path, s0, speed, duration)
}

/// Oncoming cars, one per backward lane, spread over the far part of the road.
fn oncoming_traffic(ctx: &mut Ctx, map: &MapSpec, duration: f64) -> Vec<TrackSpec> {
    (0..ctx.backward)
        .map(|k| {
            let path = lane_path(map, &[&backward_id(k)]);
            let x = ctx.u(160.0, ROAD_LENGTH - 10.0);
            let v = ctx.u(8.0, 13.0);
            let size = ctx.car();
            vehicle(&format!("oncoming_{k}"), size, &path, ROAD_LENGTH - x, &Profile::constant(v), duration)
        })
        .collect()
}

fn straight(ctx: &mut Ctx) -> Draft {
    let duration = 15.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let k = ctx.pick(ctx.forward);
    let v = ctx.u(8.0, 13.0);
    let lane = forward_id(k);
    let path = lane_path(&map, &[&lane]);
    let plan = ExpertPlan::new(path.clone(), 20.0, v, duration);
    let size = ctx.car();
    let gap = ctx.u(40.0, 60.0);
    let lead_speed = v * ctx.u(0.9, 1.1);
    let mut agents = vec![vehicle(
        "lead",
        size,
        &path,
        20.0 + front_overhang() + gap + size.0 / 2.0,
        &Profile::constant(lead_speed),
        duration,
    )];
    if ctx.forward > 1 {
        let next = if k + 1 < ctx.forward { k + 1 } else { k - 1 };
        let side = lane_path(&map, &[&forward_id(next)]);
        let size = ctx.car();
        let (s0, speed) = (ctx.u(0.0, 80.0), ctx.u(8.0, 13.0));
        agents.push(vehicle("adjacent", size, &side, s0, &Profile::constant(speed), duration));
    }
    agents.extend(oncoming_traffic(ctx, &map, duration));
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: "free driving on a straight road".into(),
    }
}

fn follow(ctx: &mut Ctx) -> Draft {
    let duration = 18.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let k = ctx.pick(ctx.forward);
    let v = ctx.u(9.0, 12.0);
    let lane = forward_id(k);
    let path = lane_path(&map, &[&lane]);
    let plan = ExpertPlan::new(path.clone(), 20.0, v, duration);
    let size = ctx.car();
    let gap = ctx.u(22.0, 30.0);
    let (t1, slow) = (ctx.u(3.0, 6.0), ctx.u(0.4, 0.7));
    let t2 = t1 + ctx.u(5.0, 7.0);
    let profile = Profile(vec![(0.0, v), (t1, v), (t1 + 3.0, slow * v), (t2, slow * v), (t2 + 4.0, v)]);
    let mut agents = vec![vehicle(
        "lead",
        size,
        &path,
        20.0 + front_overhang() + gap + size.0 / 2.0,
        &profile,
        duration,
    )];
    agents.extend(oncoming_traffic(ctx, &map, duration));
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: "car following behind a lead that slows down and speeds up".into(),
    }
}

/// S-bend: a curve of `angle` and the opposite curve after a short straight.
fn curve_map(radius: f64, angle: f64) -> MapSpec {
    roads::road(
        p(0.0, 0.0),
        0.0,
        &[
            roads::Segment::Straight(40.0),
            roads::Segment::Arc { radius, angle },
            roads::Segment::Straight(30.0),
            roads::Segment::Arc { radius, angle: -angle },
            roads::Segment::Straight(200.0),
        ],
        2,
        0,
    )
}

fn curve(ctx: &mut Ctx) -> Draft {
    let duration = 16.0;
    let radius = ctx.u(40.0, 60.0);
    let sign = if ctx.pick(2) == 0 { 1.0 } else { -1.0 };
    let angle = sign * ctx.u(std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_2);
    let map = curve_map(radius, angle);
    let k = ctx.pick(2);
    let lane = forward_id(k);
    let path = lane_path(&map, &[&lane]);
    let v = ctx.u(9.0, 12.0);
    let plan = ExpertPlan::new(path, 10.0, v, duration);
    let other = lane_path(&map, &[&forward_id(1 - k)]);
    let size = ctx.car();
    let (s0, speed) = (ctx.u(30.0, 60.0), ctx.u(7.0, 9.0));
    let agents = vec![vehicle("adjacent", size, &other, s0, &Profile::constant(speed), duration)];
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: format!("S-bend of radius {radius:.0} m"),
    }
}

fn lane_change(ctx: &mut Ctx) -> Draft {
    let duration = 15.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let k = ctx.pick(ctx.forward);
    let target = match k {
        0 => 1,
        k if k + 1 == ctx.forward => k - 1,
        k => {
            if ctx.pick(2) == 0 {
                k - 1
            } else {
                k + 1
            }
        }
    };
    let v = ctx.u(9.0, 13.0);
    let (t_lc, span) = (ctx.u(3.0, 6.0), ctx.u(4.0, 5.5));
    let (x0, x_lc, len) = (20.0, 20.0 + v * t_lc, v * span);
    let (y0, y1) = (lane_y(k), lane_y(target));
    let path = lateral_path(0.0, ROAD_LENGTH, |x| y0 + (y1 - y0) * smoothstep((x - x_lc) / len));
    let plan = ExpertPlan::new(path, x0, v, duration);

    // A slower car ahead in the ego lane motivates the change.
    let own = lane_path(&map, &[&forward_id(k)]);
    let size = ctx.car();
    let lead_speed = v * ctx.u(0.55, 0.75);
    let gap = 15.0 + (v - lead_speed) * (t_lc + 0.5 * span);
    let mut agents = vec![vehicle(
        "slow_lead",
        size,
        &own,
        x0 + front_overhang() + gap + size.0 / 2.0,
        &Profile::constant(lead_speed),
        duration,
    )];
    // Traffic on the target lane stays well clear of the gap.
    let side = lane_path(&map, &[&forward_id(target)]);
    let size = ctx.car();
    let ahead = x_lc + ctx.u(60.0, 80.0);
    agents.push(vehicle("target_lead", size, &side, ahead, &Profile::constant(v), duration));
    agents.extend(oncoming_traffic(ctx, &map, duration));
    Draft {
        map,
        agents,
        plan,
        route: ids(&[forward_id(k), forward_id(target)]),
        description: format!("lane change from {} to {}", forward_id(k), forward_id(target)),
    }
}

/// Ego path up the ramp, along the auxiliary lane, then into the main lane
/// over `[x_lc, x_lc + len]`.
fn ramp_path(x_lc: f64, len: f64) -> Polyline {
    use roads::ramp::*;
    let mut pts: Vec<Point2> = (0..=(MAIN_SPLIT - RAMP_START) as usize)
        .map(|k| {
            let x = RAMP_START + k as f64;
            p(x, roads::ramp_curve(x))
        })
        .collect();
    let n = (MAIN_END - MAIN_SPLIT) as usize;
    pts.extend((1..=n).map(|k| {
        let x = MAIN_SPLIT + k as f64;
        p(x, -LANE_WIDTH + LANE_WIDTH * smoothstep((x - x_lc) / len))
    }));
    polyline(pts)
}

struct Gap {
    /// Bumper gap from the ego's front to the lead's rear when the ego is half way in.
    ahead: Option<f64>,
    /// Bumper gap from the rear car's front to the ego's rear at that moment.
    behind: f64,
    /// Optional second car ahead of the lead, with its own bumper gap.
    second: Option<f64>,
}

fn merge_draft(ctx: &mut Ctx, v: f64, x_lc: f64, len: f64, gaps: Gap, duration: f64, description: String) -> Draft {
    let map = roads::ramp_map();
    let path = ramp_path(x_lc, len);
    let plan = ExpertPlan::new(path.clone(), 5.0, v, duration);
    let free = free_drive(&plan);
    let s_mid = path.project(p(x_lc + len / 2.0, -LANE_WIDTH / 2.0)).arc_length;
    let t_mid = time_at(&free, &path, s_mid);
    let x_mid = free.iter().find(|r| r.t >= t_mid).map(|r| r.x).expect("time inside log");
    let main = lane_path(&map, &["main_a", "main_b"]);
    let x_start = main.points()[0].x;
    let lead_speed = v * ctx.u(0.95, 1.02);
    let mut agents = Vec::new();
    let mut place = |id: &str, center_x: f64, speed: f64, size: (f64, f64)| {
        let s0 = center_x - speed * t_mid - x_start;
        agents.push(vehicle(id, size, &main, s0.max(0.0), &Profile::constant(speed), duration));
    };
    let size = ctx.car();
    place("rear", x_mid - rear_overhang() - gaps.behind - size.0 / 2.0, lead_speed - 0.5, size);
    if let Some(g) = gaps.ahead {
        let size = ctx.car();
        let lead_x = x_mid + front_overhang() + g + size.0 / 2.0;
        place("lead", lead_x, lead_speed, size);
        if let Some(g2) = gaps.second {
            let size2 = ctx.car();
            place("second_lead", lead_x + size.0 / 2.0 + g2 + size2.0 / 2.0, lead_speed, size2);
        }
    }
    Draft {
        map,
        agents,
        plan,
        route: ids(&["ramp".into(), "aux".into(), "main_b".into()]),
        description,
    }
}

fn merge(ctx: &mut Ctx) -> Draft {
    let v = ctx.u(10.0, 13.0);
    let len = v * ctx.u(3.5, 4.0);
    let x_lc = ctx.u(130.0, roads::ramp::AUX_END - 8.0 - len);
    let gaps = Gap {
        behind: ctx.u(8.0, 14.0),
        ahead: (ctx.pick(2) == 0).then(|| ctx.u(20.0, 24.0)),
        second: None,
    };
    merge_draft(ctx, v, x_lc, len, gaps, 20.0, "on-ramp merge into main-lane traffic".into())
}

/// Ego path through the intersection from approach `a`.
fn movement_path(map: &MapSpec, a: usize, m: Movement) -> (Polyline, Vec<LaneId>) {
    let lanes = roads::movement_lanes(a, m);
    let names: Vec<&str> = lanes.iter().map(|l| l.as_str()).collect();
    (lane_path(map, &names), lanes)
}

/// Arc length, along its in-lane, of the stop line on every approach.
const STOP_LINE_S: f64 = roads::ARM_LENGTH + roads::BOX_HALF - roads::STOP_LINE_AT;
const INTERSECTION_START_S: f64 = 70.0;

/// Places `path`'s car so that its centre reaches arc length `s` at time `t`.
fn start_for_arrival(s: f64, t: f64, speed: f64) -> f64 {
    (s - speed * t).max(0.0)
}

fn turn_left(ctx: &mut Ctx, protected: bool) -> Draft {
    let duration = 18.0;
    let a = ctx.pick(4);
    let stops: Vec<usize> = if protected { (1..4).map(|k| (a + k) % 4).collect() } else { vec![] };
    let map = roads::intersection(&stops, &[0, 1, 2, 3]);
    let (path, route) = movement_path(&map, a, Movement::Left);
    let v = ctx.u(9.0, 12.0);
    let mut plan = ExpertPlan::new(path.clone(), INTERSECTION_START_S, v, duration);
    let mut agents = Vec::new();
    if protected {
        // Cross and oncoming traffic waits at its stop lines.
        for k in [1, 2] {
            let b = (a + k) % 4;
            let lane = lane_path(&map, &[&roads::in_lane(b)]);
            let size = ctx.car();
            let s0 = STOP_LINE_S - 1.0 - size.0 / 2.0;
            agents.push(vehicle(&format!("waiting_{k}"), size, &lane, s0, &Profile::constant(0.0), duration));
        }
    } else {
        let (onc, _) = movement_path(&map, (a + 2) % 4, Movement::Straight);
        let (s_e, s_o) = first_crossing(&path, &onc).expect("left turn crosses the oncoming lane");
        let free = free_drive(&plan);
        let t_e = time_at(&free, &path, s_e - 6.0 - front_overhang());
        let u = ctx.u(9.0, 12.0);
        let t_arrive = t_e + ctx.u(-0.5, 1.5);
        let size = ctx.car();
        let s0 = start_for_arrival(s_o, t_arrive, u);
        agents.push(vehicle("oncoming", size, &onc, s0, &Profile::constant(u), duration));
        let t_clear = (s_o + size.0 / 2.0 + 3.0 - s0) / u;
        plan.holds.push(Hold {
            s: s_e - 5.0,
            release: Release::At(t_clear),
        });
    }
    Draft {
        map,
        agents,
        plan,
        route,
        description: format!(
            "{} left turn from the {} approach",
            if protected { "protected" } else { "unprotected" },
            roads::APPROACHES[a]
        ),
    }
}

fn turn_right(ctx: &mut Ctx) -> Draft {
    let duration = 18.0;
    let a = ctx.pick(4);
    let map = roads::intersection(&[], &[0, 1, 2, 3]);
    let (path, route) = movement_path(&map, a, Movement::Right);
    let v = ctx.u(9.0, 12.0);
    let mut plan = ExpertPlan::new(path.clone(), INTERSECTION_START_S, v, duration);
    // Cross traffic from the left goes straight into the ego's exit lane.
    let (cross, _) = movement_path(&map, (a + 3) % 4, Movement::Straight);
    let connector_end = roads::ARM_LENGTH + path_len(&map, &roads::connector(a, Movement::Right));
    let cross_end = roads::ARM_LENGTH + 2.0 * roads::BOX_HALF;
    let free = free_drive(&plan);
    let t_e = time_at(&free, &path, connector_end - front_overhang());
    let u = ctx.u(9.0, 12.0);
    let size = ctx.car();
    let t_pass = t_e - ctx.u(2.0, 3.5);
    let s0 = start_for_arrival(cross_end, t_pass, u);
    let t_clear = (cross_end + size.0 / 2.0 + 3.0 - s0) / u;
    agents_hold(&mut plan, roads::ARM_LENGTH, t_clear);
    let agents = vec![vehicle("cross", size, &cross, s0, &Profile::constant(u), duration)];
    Draft {
        map,
        agents,
        plan,
        route,
        description: format!("right turn from the {} approach behind cross traffic", roads::APPROACHES[a]),
    }
}

fn agents_hold(plan: &mut ExpertPlan, s: f64, t_clear: f64) {
    plan.holds.push(Hold {
        s,
        release: Release::At(t_clear),
    });
}

fn path_len(map: &MapSpec, lane: &str) -> f64 {
    lane_path(map, &[lane]).length()
}

fn stop_controlled(ctx: &mut Ctx) -> Draft {
    let duration = 18.0;
    let a = ctx.pick(4);
    let map = roads::intersection(&[0, 1, 2, 3], &[0, 1, 2, 3]);
    let m = if ctx.pick(2) == 0 { Movement::Straight } else { Movement::Right };
    let (path, route) = movement_path(&map, a, m);
    let v = ctx.u(9.0, 12.0);
    let mut plan = ExpertPlan::new(path, INTERSECTION_START_S, v, duration);
    plan.holds.push(Hold {
        s: STOP_LINE_S,
        release: Release::AfterStopping(ctx.u(1.0, 2.5)),
    });
    let b = (a + 2) % 4;
    let lane = lane_path(&map, &[&roads::in_lane(b)]);
    let size = ctx.car();
    let agents = vec![vehicle(
        "waiting",
        size,
        &lane,
        STOP_LINE_S - 1.0 - size.0 / 2.0,
        &Profile::constant(0.0),
        duration,
    )];
    Draft {
        map,
        agents,
        plan,
        route,
        description: format!("all-way stop, {:?} from the {} approach", m, roads::APPROACHES[a]).to_lowercase(),
    }
}

fn pedestrian(ctx: &mut Ctx) -> Draft {
    let duration = 18.0;
    let lanes = ctx.forward + ctx.backward;
    let x_cw = ctx.u(90.0, 120.0);
    let mut map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    map.crosswalks.push(roads::road_crosswalk(x_cw, 3.0, lanes));
    let k = ctx.pick(ctx.forward);
    let lane = forward_id(k);
    let path = lane_path(&map, &[&lane]);
    let v = ctx.u(9.0, 12.0);
    let mut plan = ExpertPlan::new(path.clone(), 20.0, v, duration);
    let stop_front = x_cw - 2.0;
    let free = free_drive(&plan);
    let t_arrive = time_at(&free, &path, stop_front - front_overhang());
    let walk = ctx.u(1.2, 1.5);
    let x_ped = x_cw + 1.5;
    let y_start = -LANE_WIDTH / 2.0 - 3.0;
    let y_end = lanes as f64 * LANE_WIDTH + 2.0;
    let ped_path = polyline(vec![p(x_ped, y_start), p(x_ped, y_end)]);
    let lane_right = lane_y(k) - LANE_WIDTH / 2.0;
    let t_enter = t_arrive - ctx.u(0.5, 2.0);
    let t_walk = t_enter - (lane_right - y_start) / walk;
    let (s0, profile) = if t_walk > 0.0 {
        (0.0, Profile(vec![(t_walk, 0.0), (t_walk + 0.5, walk)]))
    } else {
        (-t_walk * walk, Profile::constant(walk))
    };
    let track = crate::expert::scripted_track(
        "pedestrian",
        AgentCategory::Pedestrian,
        0.6,
        0.6,
        &ped_path,
        s0,
        &profile,
        duration,
    );
    let cleared = lane_y(k) + LANE_WIDTH / 2.0 + 1.0;
    let t_clear = track
        .states
        .iter()
        .find(|s| s.y > cleared)
        .map(|s| s.t)
        .unwrap_or(duration);
    plan.holds.push(Hold {
        s: stop_front + 1.0,
        release: Release::At(t_clear),
    });
    Draft {
        map,
        agents: vec![track],
        plan,
        route: ids(&[lane]),
        description: "yield to a pedestrian on a crosswalk".into(),
    }
}

/// Lateral nudge of `offset` between `x1` and `x2`, ramped over `ramp` metres.
fn nudge(y0: f64, offset: f64, x1: f64, x2: f64, ramp: f64) -> impl Fn(f64) -> f64 {
    move |x| y0 + offset * (smoothstep((x - x1) / ramp) - smoothstep((x - x2) / ramp))
}

fn cyclist(ctx: &mut Ctx) -> Draft {
    let duration = 15.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let lane = forward_id(0);
    let v = ctx.u(9.0, 12.0);
    let vc = ctx.u(4.0, 5.5);
    let (len, y_c) = (1.8, -1.2);
    let x0 = 20.0;
    let xc0 = x0 + front_overhang() + ctx.u(25.0, 40.0) + len / 2.0;
    let rel = v - vc;
    let t1 = (xc0 - len / 2.0 - 15.0 - x0 - front_overhang()) / rel;
    let t2 = (xc0 + len / 2.0 + 8.0 - x0 + rear_overhang()) / rel;
    let (x1, x2) = (x0 + v * t1, x0 + v * t2);
    let path = lateral_path(0.0, ROAD_LENGTH, nudge(0.0, 1.25, x1, x2, 20.0));
    let mut plan = ExpertPlan::new(path, x0, v, duration);
    plan.ignore.push("cyclist".into());
    let bike_path = lateral_path(0.0, ROAD_LENGTH, |_| y_c);
    let agents = vec![crate::expert::scripted_track(
        "cyclist",
        AgentCategory::Cyclist,
        len,
        0.7,
        &bike_path,
        xc0,
        &Profile::constant(vc),
        duration,
    )];
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: "pass a cyclist riding at the lane edge".into(),
    }
}

fn close_proximity(ctx: &mut Ctx) -> Draft {
    let duration = 15.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let lane = forward_id(0);
    let v = ctx.u(8.0, 11.0);
    let clearance = ctx.u(0.55, 0.85);
    let size = ctx.car();
    let x0 = 20.0;
    let x_p = x0 + v * ctx.u(5.0, 7.0);
    let y_p = -LANE_WIDTH / 2.0 - 0.2;
    let offset = clearance + y_p + size.1 / 2.0 + dims().width / 2.0;
    let x1 = x_p - size.0 / 2.0 - 5.0 - front_overhang() - 20.0;
    let x2 = x_p + size.0 / 2.0 + 3.0 + rear_overhang();
    let path = lateral_path(0.0, ROAD_LENGTH, nudge(0.0, offset, x1, x2, 20.0));
    let mut plan = ExpertPlan::new(path, x0, v, duration);
    plan.ignore.push("parked".into());
    let curb = lateral_path(0.0, ROAD_LENGTH, |_| y_p);
    let agents = vec![vehicle("parked", size, &curb, x_p, &Profile::constant(0.0), duration)];
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: format!("squeeze past a parked car with {clearance:.2} m clearance"),
    }
}

fn high_acceleration(ctx: &mut Ctx) -> Draft {
    let duration = 15.0;
    let map = roads::straight_road(ROAD_LENGTH, ctx.forward, ctx.backward);
    let k = ctx.pick(ctx.forward);
    let lane = forward_id(k);
    let path = lane_path(&map, &[&lane]);
    let v = ctx.u(10.0, 13.0);
    let x0 = 20.0;
    let mut plan = ExpertPlan::new(path.clone(), x0, v, duration);
    let t_b = ctx.u(4.0, 7.0);
    let decel = ctx.u(3.4, 3.8);
    plan.brake = Some(BrakePulse {
        start: t_b + 0.4,
        end: t_b + 0.4 + v / decel + 0.5,
        decel,
    });
    let size = ctx.car();
    let gap = ctx.u(28.0, 36.0);
    let profile = Profile(vec![(0.0, v), (t_b, v), (t_b + v / 4.0, 0.0)]);
    let agents = vec![vehicle(
        "lead",
        size,
        &path,
        x0 + front_overhang() + gap + size.0 / 2.0,
        &profile,
        duration,
    )];
    Draft {
        map,
        agents,
        plan,
        route: ids(&[lane]),
        description: "hard braking behind a lead that stops suddenly".into(),
    }
}

fn draft_for(kind: &str, ctx: &mut Ctx) -> Result<Draft, GenerateError> {
    Ok(match kind {
        "straight" => straight(ctx),
        "curve" => curve(ctx),
        "follow" => follow(ctx),
        "lane_change" => lane_change(ctx),
        "merge" => merge(ctx),
        "turn_left_unprotected" => turn_left(ctx, false),
        "turn_left_protected" => turn_left(ctx, true),
        "turn_right" => turn_right(ctx),
        "pedestrian_interaction" => pedestrian(ctx),
        "cyclist_interaction" => cyclist(ctx),
        "close_proximity" => close_proximity(ctx),
        "high_acceleration" => high_acceleration(ctx),
        "stop_controlled_intersection" => stop_controlled(ctx),
        other => return Err(GenerateError::UnknownKind(other.into())),
    })
}

/// Overtaking a slow car on a two-way road. The oncoming car passes the ego
/// shortly after it is back in its lane; `speedup` is added to its speed.
fn overtake(speedup: f64) -> Draft {
    let duration = 16.0;
    let map = roads::straight_road(ROAD_LENGTH, 1, 1);
    let (v, v_slow) = (12.0, 5.0);
    let (x0, slow_x0) = (10.0, 60.0);
    let rel = v - v_slow;
    let half = CAR_LENGTH / 2.0;
    let t_out = (slow_x0 - half - 15.0 - x0 - front_overhang()) / rel;
    let t_in = (slow_x0 + half + 12.0 - x0 + rear_overhang()) / rel;
    let (x_out, x_in) = (x0 + v * t_out, x0 + v * t_in);
    let path = lateral_path(0.0, ROAD_LENGTH, nudge(0.0, LANE_WIDTH, x_out, x_in, 30.0));
    let mut plan = ExpertPlan::new(path, x0, v, duration);
    plan.ignore.push("slow".into());
    let free = free_drive(&plan);

    // First moment after the pass when the ego's outline is clear of the
    // oncoming lane by half a metre.
    let oncoming_edge = LANE_WIDTH - CAR_WIDTH / 2.0;
    let outline_top = |r: &EgoRecord| {
        dims()
            .footprint(&Pose2D::new(r.x, r.y, r.heading))
            .corners()
            .iter()
            .map(|c| c.y)
            .fold(f64::MIN, f64::max)
    };
    let peak = free.iter().position(|r| r.y >= LANE_WIDTH - 0.01).expect("ego reaches the other lane");
    let clear = free[peak..]
        .iter()
        .find(|r| outline_top(r) < oncoming_edge - 0.5)
        .expect("ego returns to its lane");
    let t_meet = clear.t + 0.4;
    let ego_front = free.iter().find(|r| r.t >= t_meet).expect("inside log").x + front_overhang();
    let v_onc = 6.0;
    let onc_center = ego_front + half + v_onc * t_meet;
    let lane_b = lane_path(&map, &[&backward_id(0)]);
    let own = lane_path(&map, &[&forward_id(0)]);
    let agents = vec![
        vehicle(
            "slow",
            (CAR_LENGTH, CAR_WIDTH),
            &own,
            slow_x0,
            &Profile::constant(v_slow),
            duration,
        ),
        vehicle(
            "oncoming",
            (CAR_LENGTH, CAR_WIDTH),
            &lane_b,
            ROAD_LENGTH - onc_center,
            &Profile::constant(v_onc + speedup),
            duration,
        ),
    ];
    Draft {
        map,
        agents,
        plan,
        route: ids(&[forward_id(0)]),
        description: if speedup > 0.0 {
            format!("overtake with the oncoming car {speedup} m/s faster than recorded")
        } else {
            "overtake a slow car against oncoming traffic".into()
        },
    }
}

fn regression_draft(name: &str, ctx: &mut Ctx) -> Draft {
    match name {
        "intersection_fork" => {
            let map = roads::intersection(&[], &[0, 1, 2, 3]);
            let (path, route) = movement_path(&map, 0, Movement::Left);
            Draft {
                map,
                agents: vec![],
                plan: ExpertPlan::new(path, INTERSECTION_START_S, 10.0, 18.0),
                route,
                description: "left at a fork where straight and right are equally valid without a goal".into(),
            }
        }
        "dual_merge" => {
            let gaps = Gap {
                behind: 10.0,
                ahead: Some(22.0),
                second: Some(24.0),
            };
            merge_draft(ctx, 11.0, 150.0, 42.0, gaps, 20.0, "merge with two acceptable gaps".into())
        }
        "overtake" => overtake(0.0),
        "overtake_fast_oncoming" => overtake(ONCOMING_SPEEDUP),
        "follower_fixture" => {
            let duration = 15.0;
            let map = roads::straight_road(ROAD_LENGTH, 2, 0);
            let path = lane_path(&map, &[&forward_id(0)]);
            let (v, x0) = (10.0, 60.0);
            let gap = 20.0;
            let follower = vehicle(
                "follower",
                (CAR_LENGTH, CAR_WIDTH),
                &path,
                x0 - rear_overhang() - gap - CAR_LENGTH / 2.0,
                &Profile::constant(v),
                duration,
            );
            Draft {
                map,
                agents: vec![follower],
                plan: ExpertPlan::new(path, x0, v, duration),
                route: ids(&[forward_id(0)]),
                description: "steady driving with a close follower".into(),
            }
        }
        "curve_fixture" => {
            let map = curve_map(40.0, std::f64::consts::FRAC_PI_2);
            let path = lane_path(&map, &[&forward_id(0)]);
            Draft {
                map,
                agents: vec![],
                plan: ExpertPlan::new(path, 10.0, 9.0, 16.0),
                route: ids(&[forward_id(0)]),
                description: "S-bend of two quarter turns, radius 40 m".into(),
            }
        }
        _ => unreachable!("regression names are fixed"),
    }
}

fn assemble(id: String, kind: &str, city: City, seed: u64, d: Draft) -> Result<ScenarioFile, GenerateError> {
    let tracked: Vec<_> = d.agents.iter().map(to_tracked).collect();
    let limits = ModelLimits::default();
    let expert = drive(
        &d.plan,
        &tracked,
        dims(),
        &limits,
        &ControllerGains::default(),
        &IdmParams::default(),
    );
    let last = expert.last().expect("non-empty log");
    let mut file = ScenarioFile {
        schema_version: SCHEMA_VERSION,
        id,
        kind: kind.to_string(),
        metadata: ScenarioMetadata {
            city: city.label().into(),
            seed,
            left_hand_traffic: false,
            description: d.description,
        },
        dt: GRID_DT,
        map: d.map,
        ego: EgoSpec {
            dims: dims(),
            limits,
            gains: None,
        },
        goal: Pose2D::new(last.x, last.y, last.heading),
        expert,
        agents: d.agents,
        route: Some(d.route),
        idm: None,
        tags: vec![],
    };
    if city.left_hand_traffic() {
        file = file.transformed(&RigidTransform::mirror_x());
    }
    let sc = Scenario::from_file(file.clone())?;
    file.tags = tag_scenario(&sc.expert, &sc.agents, &sc.map, sc.left_hand_traffic());
    Ok(file)
}

/// One procedurally generated scenario.
pub fn generate_one(seed: u64, kind: &str, index: usize, city: City) -> Result<ScenarioFile, GenerateError> {
    let k = KINDS
        .iter()
        .position(|x| *x == kind)
        .ok_or_else(|| GenerateError::UnknownKind(kind.into()))?;
    let s = scenario_seed(seed, k, index);
    let mut ctx = Ctx::new(s, city);
    let draft = draft_for(kind, &mut ctx)?;
    assemble(format!("{kind}_{index:03}"), kind, city, s, draft)
}

/// One of the fixed regression scenarios, in the given city's traffic side.
pub fn regression(name: &str, city: City) -> Result<ScenarioFile, GenerateError> {
    if !REGRESSION.contains(&name) {
        return Err(GenerateError::UnknownKind(name.into()));
    }
    let mut ctx = Ctx::new(0, City::Boston);
    let draft = regression_draft(name, &mut ctx);
    assemble(name.to_string(), "regression", city, 0, draft)
}

/// All scenarios for `spec`: the counted kinds in kind order, then the
/// regression set.
pub fn generate(seed: u64, spec: &GenerateSpec) -> Result<Vec<ScenarioFile>, GenerateError> {
    spec.validate()?;
    let mut out = Vec::new();
    for kind in KINDS {
        for i in 0..spec.counts.get(kind).copied().unwrap_or(0) {
            out.push(generate_one(seed, kind, i, spec.city)?);
        }
    }
    for name in REGRESSION {
        out.push(regression(name, spec.city)?);
    }
    Ok(out)
}

/// Writes each scenario to `<dir>/<id>.json`.
pub fn write_all(files: &[ScenarioFile], dir: &Path) -> Result<(), GenerateError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| GenerateError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for f in files {
        let path = dir.join(format!("{}.json", f.id));
        std::fs::write(&path, f.to_json()?).map_err(io(&path))?;
    }
    Ok(())
}
