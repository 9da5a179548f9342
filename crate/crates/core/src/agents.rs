//! Background agents: exact log replay and an IDM lane follower.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lerp, lerp_angle, AgentCategory, AgentState, ObjectSnapshot, Point2, Pose2D, TrackedObject};
use crate::map::{LaneId, LanePath, SemanticMap};

/// How far past either end of a track replay extrapolates at constant velocity.
pub const EXTRAPOLATION_LIMIT: f64 = 0.5;
/// Agents whose recorded speed never exceeds this are treated as parked.
pub const STATIC_SPEED: f64 = 0.1;
/// Objects moving against the agent's heading faster than this are not leaders.
pub const ONCOMING_SPEED: f64 = 0.5;
/// Maximum distance from a lane centerline for a track to be associated with it.
pub const LANE_ASSOCIATION_GATE: f64 = 2.0;
const PATH_EXTENSION_MARGIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Upper bound on the desired speed; each agent also caps it by its lane's
    /// speed limit and its own recorded top speed.
    pub desired_speed: f64,
    pub min_gap: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 30.0,
            min_gap: 2.0,
            time_headway: 1.5,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), crate::ValidationError> {
        let all = [
            self.desired_speed,
            self.min_gap,
            self.time_headway,
            self.max_accel,
            self.comfort_decel,
            self.exponent,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(crate::ValidationError::new("IDM parameters must be positive"))
        }
    }

    /// Deceleration used when the gap has closed completely.
    pub fn emergency_decel(&self) -> f64 {
        -2.0 * self.comfort_decel
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("track {id} has no state at t={time:.3}")]
pub struct TrackExpired {
    pub id: String,
    pub time: f64,
}

/// Recorded state of `track` at `t`.
///
/// Position and velocity are interpolated linearly, heading along the
/// shorter arc. Within [`EXTRAPOLATION_LIMIT`] of either end the nearest
/// sample is carried at constant velocity.
pub fn replay_state(track: &TrackedObject, t: f64) -> Result<AgentState, TrackExpired> {
    let expired = || TrackExpired {
        id: track.id.clone(),
        time: t,
    };
    let states = &track.states;
    let first = states.first().ok_or_else(expired)?;
    let last = states[states.len() - 1];
    if !t.is_finite() || t < first.time - EXTRAPOLATION_LIMIT || t > last.time + EXTRAPOLATION_LIMIT {
        return Err(expired());
    }
    let extrapolate = |s: &AgentState| {
        let dt = t - s.time;
        AgentState {
            time: t,
            pose: Pose2D {
                x: s.pose.x + s.velocity.x * dt,
                y: s.pose.y + s.velocity.y * dt,
                heading: s.pose.heading,
            },
            velocity: s.velocity,
        }
    };
    if t == last.time {
        return Ok(last);
    }
    if t > last.time {
        return Ok(extrapolate(&last));
    }
    if t < first.time {
        return Ok(extrapolate(first));
    }
    let i = states.partition_point(|s| s.time <= t) - 1;
    let (a, b) = (&states[i], &states[i + 1]);
    let f = (t - a.time) / (b.time - a.time);
    Ok(AgentState {
        time: t,
        pose: Pose2D {
            x: lerp(a.pose.x, b.pose.x, f),
            y: lerp(a.pose.y, b.pose.y, f),
            heading: lerp_angle(a.pose.heading, b.pose.heading, f),
        },
        velocity: Point2::new(lerp(a.velocity.x, b.velocity.x, f), lerp(a.velocity.y, b.velocity.y, f)),
    })
}

pub fn replay_snapshot(track: &TrackedObject, t: f64) -> Result<ObjectSnapshot, TrackExpired> {
    let s = replay_state(track, t)?;
    Ok(ObjectSnapshot {
        id: track.id.clone(),
        category: track.category,
        pose: s.pose,
        velocity: s.velocity,
        length: track.length,
        width: track.width,
    })
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("no gap left to the leader ({gap:.3} m)")]
pub struct EmergencyStop {
    pub gap: f64,
}

/// IDM acceleration, clamped to `[-2b, a]`. Without a leader only the
/// free-road term applies.
pub fn idm_accel(v: f64, gap: Option<f64>, v_lead: f64, p: &IdmParams) -> Result<f64, EmergencyStop> {
    let v = v.max(0.0);
    let free = if p.desired_speed > 0.0 {
        (v / p.desired_speed).powf(p.exponent)
    } else {
        1.0
    };
    let interaction = match gap {
        None => 0.0,
        Some(g) if !(g > 0.0) => return Err(EmergencyStop { gap: g }),
        Some(g) => {
            let s_star = p.min_gap + v * p.time_headway + v * (v - v_lead) / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            (s_star.max(0.0) / g).powi(2)
        }
    };
    Ok((p.max_accel * (1.0 - free - interaction)).clamp(p.emergency_decel(), p.max_accel))
}

/// State of a vehicle agent driven by IDM along a fixed lane path.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntimeState {
    pub id: String,
    pub category: AgentCategory,
    pub lane_path: LanePath,
    pub arc_length: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    /// Zero for parked agents, which never move.
    pub desired_speed: f64,
}

impl AgentRuntimeState {
    /// Starts a reactive agent from its recorded state at `t`, following the
    /// lanes the recording visits afterwards. Returns `None` when the track
    /// is not near any aligned lane or has no state at `t`.
    pub fn from_track(track: &TrackedObject, t: f64, map: &SemanticMap, params: &IdmParams) -> Option<Self> {
        let start = replay_state(track, t).ok()?;
        let ids = recorded_lanes(track, t, map)?;
        let lane_path = LanePath::new(map, &ids).ok()?;
        let proj = lane_path.project(start.pose.position());
        let top_speed = track.states.iter().map(|s| s.velocity.norm()).fold(0.0, f64::max);
        let desired_speed = if top_speed < STATIC_SPEED {
            0.0
        } else {
            top_speed.min(lane_path.lanes()[0].speed_limit).min(params.desired_speed)
        };
        Some(Self {
            id: track.id.clone(),
            category: track.category,
            arc_length: proj.s,
            speed: if desired_speed > 0.0 { start.velocity.norm() } else { 0.0 },
            lane_path,
            length: track.length,
            width: track.width,
            desired_speed,
        })
    }

    pub fn pose(&self) -> Pose2D {
        self.lane_path.pose_at(self.arc_length)
    }

    pub fn snapshot(&self) -> ObjectSnapshot {
        let pose = self.pose();
        ObjectSnapshot {
            id: self.id.clone(),
            category: self.category,
            pose,
            velocity: pose.direction().scale(self.speed),
            length: self.length,
            width: self.width,
        }
    }
}

/// Lane sequence visited by `track` from `t` on, kept connected through
/// successor links. When the recording reveals that an earlier pick was the
/// wrong branch of a fork, the branch is swapped for its sibling.
fn recorded_lanes(track: &TrackedObject, t: f64, map: &SemanticMap) -> Option<Vec<LaneId>> {
    let start = replay_state(track, t).ok()?;
    let first = map.nearest_aligned_lane(start.pose.position(), start.pose.heading);
    if first.distance > LANE_ASSOCIATION_GATE {
        return None;
    }
    let mut ids = vec![first.lane_id];
    for s in track.states.iter().filter(|s| s.time > t) {
        let proj = map.nearest_aligned_lane(s.pose.position(), s.pose.heading);
        let last = ids.last().expect("non-empty");
        if proj.distance > LANE_ASSOCIATION_GATE || &proj.lane_id == last {
            continue;
        }
        let follows = |prev: &LaneId| map.lane(prev).is_ok_and(|l| l.successors.contains(&proj.lane_id));
        if follows(last) {
            ids.push(proj.lane_id);
        } else if ids.len() >= 2 && follows(&ids[ids.len() - 2]) {
            *ids.last_mut().expect("non-empty") = proj.lane_id;
        }
    }
    Some(ids)
}

/// Successor of `lane` whose start heading is closest to `lane`'s end heading.
fn straightest_successor(map: &SemanticMap, lane: &crate::map::Lane) -> Option<LaneId> {
    let end_heading = lane.centerline.heading_at(lane.length());
    lane.successors
        .iter()
        .filter_map(|id| map.lane(id).ok())
        .map(|l| {
            let turn = crate::geometry::angle_diff(l.centerline.heading_at(0.0), end_heading).abs();
            (turn, l.id.clone())
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// One update of a reactive agent against the previous step's world.
///
/// Returns `None` when the agent runs off the end of its lane graph.
pub fn reactive_step(
    agent: &AgentRuntimeState,
    world: &[ObjectSnapshot],
    map: &SemanticMap,
    dt: f64,
    params: &IdmParams,
) -> Option<AgentRuntimeState> {
    let mut next = agent.clone();
    if agent.desired_speed <= 0.0 {
        next.speed = 0.0;
        return Some(next);
    }
    let pose = agent.pose();
    let dir = pose.direction();
    let candidates: Vec<ObjectSnapshot> = world
        .iter()
        .filter(|o| o.id != agent.id && o.velocity.dot(dir) >= -ONCOMING_SPEED)
        .cloned()
        .collect();
    let p = IdmParams {
        desired_speed: agent.desired_speed,
        ..*params
    };
    let accel = match agent.lane_path.lead_object(pose.position(), agent.length / 2.0, &candidates) {
        Some((id, gap)) => {
            let lead = candidates.iter().find(|o| o.id == id).expect("leader is a candidate");
            idm_accel(agent.speed, Some(gap), lead.velocity.dot(dir).max(0.0), &p).unwrap_or(p.emergency_decel())
        }
        None => idm_accel(agent.speed, None, 0.0, &p).expect("free road never signals an emergency"),
    };
    next.speed = (agent.speed + accel * dt).max(0.0);
    next.arc_length = agent.arc_length + next.speed * dt;
    while next.arc_length > next.lane_path.end_s() - PATH_EXTENSION_MARGIN.max(3.0 * next.speed) {
        let Some(succ) = straightest_successor(map, next.lane_path.last_lane()) else {
            break;
        };
        if next.lane_path.push(map, &succ).is_err() {
            break;
        }
    }
    if next.arc_length > next.lane_path.end_s() {
        return None;
    }
    Some(next)
}
