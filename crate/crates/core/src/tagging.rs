//! Rule-based scenario tags and the scenario-specific metrics built on them.

use serde::{Deserialize, Serialize};

use crate::agents::{replay_snapshot, LANE_ASSOCIATION_GATE};
use crate::geometry::{
    point_segment_projection, segment_intersection, segments_intersect, unwrap_angles, AgentCategory, EgoState,
    ObjectSnapshot, OrientedBox, Point2, Pose2D, TrackedObject,
};
use crate::map::{LaneId, LanePath, Polygon, SemanticMap};
use crate::metrics::{ttc_at_step, TIME_GAP_SPEED_FLOOR, TTC_HORIZON};
use crate::sim::{ego_snapshot, SimLog, SimStep};
use crate::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    LaneChange,
    Merge,
    TurnLeftUnprotected,
    TurnLeftProtected,
    TurnRight,
    PedestrianInteraction,
    CyclistInteraction,
    CloseProximity,
    HighAcceleration,
    StopControlledIntersection,
}

impl TagKind {
    pub const ALL: [TagKind; 10] = [
        TagKind::LaneChange,
        TagKind::Merge,
        TagKind::TurnLeftUnprotected,
        TagKind::TurnLeftProtected,
        TagKind::TurnRight,
        TagKind::PedestrianInteraction,
        TagKind::CyclistInteraction,
        TagKind::CloseProximity,
        TagKind::HighAcceleration,
        TagKind::StopControlledIntersection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagKind::LaneChange => "lane_change",
            TagKind::Merge => "merge",
            TagKind::TurnLeftUnprotected => "turn_left_unprotected",
            TagKind::TurnLeftProtected => "turn_left_protected",
            TagKind::TurnRight => "turn_right",
            TagKind::PedestrianInteraction => "pedestrian_interaction",
            TagKind::CyclistInteraction => "cyclist_interaction",
            TagKind::CloseProximity => "close_proximity",
            TagKind::HighAcceleration => "high_acceleration",
            TagKind::StopControlledIntersection => "stop_controlled_intersection",
        }
    }

    pub fn parse(s: &str) -> Option<TagKind> {
        TagKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTag {
    pub kind: TagKind,
    pub t_start: f64,
    pub t_end: f64,
    /// Agent ids involved, sorted.
    #[serde(default)]
    pub subjects: Vec<String>,
    /// Target lane of a lane change or merge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<LaneId>,
}

pub const LANE_CHANGE_DISPLACEMENT: f64 = 1.5;
pub const LANE_CHANGE_HALF_WINDOW: f64 = 3.0;
pub const MERGE_RADIUS: f64 = 30.0;
pub const TURN_ANGLE: f64 = std::f64::consts::PI / 3.0;
/// Half width of the lane buffers that make up intersection areas.
pub const INTERSECTION_BUFFER: f64 = 1.75;
pub const VRU_RADIUS: f64 = 10.0;
pub const CLOSE_PROXIMITY: f64 = 1.0;
pub const HIGH_ACCEL: f64 = 3.0;
pub const HIGH_ACCEL_DURATION: f64 = 0.5;
pub const STOP_LINE_RADIUS: f64 = 5.0;
pub const STOPPED_SPEED: f64 = 0.1;
pub const VRU_CLEARANCE_WINDOW: f64 = 3.0;
/// Side of the square conflict zone placed where two lanes cross.
pub const CONFLICT_ZONE_SIZE: f64 = 3.5;

/// Agents whose tracks cover time `t`, sorted by id.
pub fn agents_at(tracks: &[TrackedObject], t: f64) -> Vec<ObjectSnapshot> {
    let mut out: Vec<ObjectSnapshot> = tracks
        .iter()
        .filter(|tr| t >= tr.start_time() - 1e-9 && t <= tr.end_time() + 1e-9)
        .filter_map(|tr| replay_snapshot(tr, t).ok())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Maximal runs of consecutive true entries as time intervals. A run of a
/// single sample is widened by one step so that every interval has positive
/// length.
fn runs(times: &[f64], mask: &[bool]) -> Vec<(f64, f64)> {
    let n = times.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && mask[j + 1] {
            j += 1;
        }
        let (a, mut b) = (times[i], times[j]);
        let mut a2 = a;
        if i == j {
            if j + 1 < n {
                b = times[j + 1];
            } else if i > 0 {
                a2 = times[i - 1];
            }
        }
        if b > a2 {
            out.push((a2, b));
        }
        i = j + 1;
    }
    out
}

fn tag(kind: TagKind, (t_start, t_end): (f64, f64), subjects: Vec<String>, lane: Option<LaneId>) -> ScenarioTag {
    ScenarioTag {
        kind,
        t_start,
        t_end,
        subjects,
        lane,
    }
}

/// Sorts by start time and merges overlapping intervals of the same kind
/// (and, for lane changes and merges, the same target lane).
pub fn merge_tags(mut tags: Vec<ScenarioTag>) -> Vec<ScenarioTag> {
    tags.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then_with(|| a.lane.cmp(&b.lane))
            .then_with(|| a.t_start.total_cmp(&b.t_start))
    });
    let mut out: Vec<ScenarioTag> = Vec::new();
    for t in tags {
        match out.last_mut() {
            Some(last) if last.kind == t.kind && last.lane == t.lane && t.t_start <= last.t_end => {
                last.t_end = last.t_end.max(t.t_end);
                last.subjects.extend(t.subjects);
            }
            _ => out.push(t),
        }
    }
    for t in &mut out {
        t.subjects.sort();
        t.subjects.dedup();
    }
    out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then_with(|| a.kind.cmp(&b.kind)).then_with(|| a.lane.cmp(&b.lane)));
    out
}

fn near(a: Point2, b: Point2) -> bool {
    a.dist(b) < 1e-6
}

/// Pairs of lanes whose paths conflict: their centerlines cross, or they
/// join into the same end point. Lanes that only meet at a shared start
/// (a fork) or at a successor junction do not conflict.
pub fn conflicting_lanes(map: &SemanticMap) -> Vec<(LaneId, LaneId)> {
    let lanes = map.lanes();
    let mut out = Vec::new();
    for i in 0..lanes.len() {
        for j in i + 1..lanes.len() {
            let (a, b) = (&lanes[i], &lanes[j]);
            let (pa, pb) = (a.centerline.points(), b.centerline.points());
            let (a0, a1, b0, b1) = (pa[0], pa[pa.len() - 1], pb[0], pb[pb.len() - 1]);
            let joined = |p: Point2| {
                (near(p, a0) && near(p, b0))
                    || (a.successors.contains(&b.id) && near(p, a1) && near(p, b0))
                    || (b.successors.contains(&a.id) && near(p, b1) && near(p, a0))
            };
            let mut conflict = near(a1, b1);
            'seg: for u in pa.windows(2) {
                if conflict {
                    break;
                }
                for v in pb.windows(2) {
                    if !segments_intersect(u[0], u[1], v[0], v[1]) {
                        continue;
                    }
                    // Collinear segments touch at their shared endpoints.
                    let contacts: Vec<Point2> = match segment_intersection(u[0], u[1], v[0], v[1]) {
                        Some(p) => vec![p],
                        None => [(u[0], v), (u[1], v), (v[0], u), (v[1], u)]
                            .iter()
                            .filter(|(p, s)| point_segment_projection(*p, s[0], s[1]).0 < 1e-9)
                            .map(|(p, _)| *p)
                            .collect(),
                    };
                    if contacts.iter().any(|&p| !joined(p)) {
                        conflict = true;
                        break 'seg;
                    }
                }
            }
            if conflict {
                out.push((a.id.clone(), b.id.clone()));
            }
        }
    }
    out
}

struct IntersectionArea<'a> {
    map: &'a SemanticMap,
    pairs: Vec<(LaneId, LaneId)>,
    lanes: Vec<LaneId>,
}

impl<'a> IntersectionArea<'a> {
    fn new(map: &'a SemanticMap) -> Self {
        let pairs = conflicting_lanes(map);
        let mut lanes: Vec<LaneId> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        lanes.sort();
        lanes.dedup();
        Self { map, pairs, lanes }
    }

    fn contains(&self, p: Point2) -> bool {
        self.lanes.iter().any(|id| {
            self.map
                .lane(id)
                .map(|l| l.centerline.project(p).distance <= INTERSECTION_BUFFER)
                .unwrap_or(false)
        })
    }

    fn conflicts_of(&self, id: &LaneId) -> Vec<LaneId> {
        self.pairs
            .iter()
            .filter_map(|(a, b)| {
                if a == id {
                    Some(b.clone())
                } else if b == id {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }

    /// A stop line on a conflicting lane or on one of its approaches
    /// gives the turning vehicle priority.
    fn protected(&self, id: &LaneId) -> bool {
        self.conflicts_of(id).iter().any(|c| {
            self.map
                .stop_lines()
                .iter()
                .any(|s| &s.lane_id == c || self.map.predecessors(c).contains(&s.lane_id))
        })
    }
}

fn lane_change_tags(expert: &[EgoState], tracks: &[TrackedObject], map: &SemanticMap) -> Vec<ScenarioTag> {
    let times: Vec<f64> = expert.iter().map(|e| e.time).collect();
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let lanes: Vec<LaneId> = expert
        .iter()
        .map(|e| map.nearest_aligned_lane(e.center(), e.pose.heading).lane_id)
        .collect();
    let center_at = |t: f64| {
        let k = times.partition_point(|&x| x < t - 1e-9).min(times.len() - 1);
        expert[k].center()
    };
    let mut out = Vec::new();
    for i in 1..expert.len() {
        let (from, to) = (&lanes[i - 1], &lanes[i]);
        let Ok(from_lane) = map.lane(from) else { continue };
        if from == to || !from_lane.is_neighbor(to) {
            continue;
        }
        let ts = times[i];
        let (ta, tb) = ((ts - LANE_CHANGE_HALF_WINDOW).max(t0), (ts + LANE_CHANGE_HALF_WINDOW).min(t1));
        let da = from_lane.centerline.project(center_at(ta)).lateral_offset;
        let db = from_lane.centerline.project(center_at(tb)).lateral_offset;
        if (db - da).abs() <= LANE_CHANGE_DISPLACEMENT || tb <= ta {
            continue;
        }
        out.push(tag(TagKind::LaneChange, (ta, tb), vec![], Some(to.clone())));
        let target = map.lane(to).expect("lane from map");
        let ego = expert[i].center();
        let nearby: Vec<String> = agents_at(tracks, ts)
            .into_iter()
            .filter(|a| {
                a.category == AgentCategory::Vehicle
                    && a.pose.position().dist(ego) <= MERGE_RADIUS
                    && target.centerline.project(a.pose.position()).distance <= LANE_ASSOCIATION_GATE
            })
            .map(|a| a.id)
            .collect();
        if !nearby.is_empty() {
            out.push(tag(TagKind::Merge, (ta, tb), nearby, Some(to.clone())));
        }
    }
    out
}

fn turn_tags(expert: &[EgoState], map: &SemanticMap, left_hand_traffic: bool) -> Vec<ScenarioTag> {
    let area = IntersectionArea::new(map);
    if area.lanes.is_empty() {
        return vec![];
    }
    let times: Vec<f64> = expert.iter().map(|e| e.time).collect();
    let heading = unwrap_angles(&expert.iter().map(|e| e.pose.heading).collect::<Vec<_>>());
    let inside: Vec<bool> = expert.iter().map(|e| area.contains(e.center())).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < expert.len() {
        if !inside[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < expert.len() && inside[j + 1] {
            j += 1;
        }
        let turn = heading[j] - heading[i];
        if turn.abs() > TURN_ANGLE && j > i {
            // Turning across oncoming traffic is a left turn under
            // right-hand traffic and a right turn under left-hand traffic.
            let across = (turn > 0.0) != left_hand_traffic;
            let mid = &expert[(i + j) / 2];
            let lane = map.nearest_aligned_lane(mid.center(), mid.pose.heading).lane_id;
            let kind = match (across, area.protected(&lane)) {
                (true, true) => TagKind::TurnLeftProtected,
                (true, false) => TagKind::TurnLeftUnprotected,
                (false, _) => TagKind::TurnRight,
            };
            out.push(tag(kind, (times[i], times[j]), vec![], None));
        }
        i = j + 1;
    }
    out
}

/// Detects the tagged maneuvers in an expert drive. The result is sorted
/// by start time, with overlapping same-kind intervals merged.
pub fn tag_scenario(
    expert: &[EgoState],
    tracks: &[TrackedObject],
    map: &SemanticMap,
    left_hand_traffic: bool,
) -> Vec<ScenarioTag> {
    if expert.len() < 2 {
        return vec![];
    }
    let times: Vec<f64> = expert.iter().map(|e| e.time).collect();
    let mut tags = lane_change_tags(expert, tracks, map);
    tags.extend(turn_tags(expert, map, left_hand_traffic));

    let snapshots: Vec<Vec<ObjectSnapshot>> = times.iter().map(|&t| agents_at(tracks, t)).collect();
    let mut ids: Vec<&str> = tracks.iter().map(|t| t.id.as_str()).collect();
    ids.sort();
    for id in ids {
        let mut vru = vec![false; expert.len()];
        let mut close = vec![false; expert.len()];
        let mut category = None;
        for (k, e) in expert.iter().enumerate() {
            if let Some(a) = snapshots[k].iter().find(|a| a.id == id) {
                let d = e.footprint().distance_to(&a.footprint());
                vru[k] = a.category.is_vru() && d < VRU_RADIUS;
                close[k] = d < CLOSE_PROXIMITY;
                category = Some(a.category);
            }
        }
        let vru_kind = match category {
            Some(AgentCategory::Pedestrian) => Some(TagKind::PedestrianInteraction),
            Some(AgentCategory::Cyclist) => Some(TagKind::CyclistInteraction),
            _ => None,
        };
        if let Some(kind) = vru_kind {
            for iv in runs(&times, &vru) {
                tags.push(tag(kind, iv, vec![id.to_string()], None));
            }
        }
        for iv in runs(&times, &close) {
            tags.push(tag(TagKind::CloseProximity, iv, vec![id.to_string()], None));
        }
    }

    let hard: Vec<bool> = expert.iter().map(|e| e.acceleration.abs() > HIGH_ACCEL).collect();
    for (a, b) in runs(&times, &hard) {
        if b - a >= HIGH_ACCEL_DURATION - 1e-9 {
            tags.push(tag(TagKind::HighAcceleration, (a, b), vec![], None));
        }
    }

    let stopped: Vec<bool> = expert
        .iter()
        .map(|e| {
            let bumper = e.pose.offset(e.dims.rear_axle_to_center + e.dims.length / 2.0, 0.0);
            e.velocity < STOPPED_SPEED
                && map
                    .stop_lines()
                    .iter()
                    .any(|s| point_segment_projection(bumper, s.start, s.end).0 < STOP_LINE_RADIUS)
        })
        .collect();
    for iv in runs(&times, &stopped) {
        tags.push(tag(TagKind::StopControlledIntersection, iv, vec![], None));
    }
    merge_tags(tags)
}

// ---------------------------------------------------------------------------
// Scenario-specific metrics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneChangeMetrics {
    pub ttc_min: Option<f64>,
    pub lead_time_gap_min: Option<f64>,
    pub rear_time_gap_min: Option<f64>,
}

fn steps_in<'a>(log: &'a SimLog, tag: &ScenarioTag) -> Result<Vec<&'a SimStep>, ValidationError> {
    let (Some(first), Some(last)) = (log.steps.first(), log.steps.last()) else {
        return Err(ValidationError::new("simulation log is empty"));
    };
    if tag.t_start < first.time - 1e-9 || tag.t_end > last.time + 1e-9 || tag.t_start >= tag.t_end {
        return Err(ValidationError::new(format!(
            "tag interval [{}, {}] is outside the log span [{}, {}]",
            tag.t_start, tag.t_end, first.time, last.time
        )));
    }
    Ok(log
        .steps
        .iter()
        .filter(|s| s.time >= tag.t_start - 1e-9 && s.time <= tag.t_end + 1e-9)
        .collect())
}

/// Path through the target lane, extended by one predecessor and successor
/// so that agents just before or after it are found.
fn target_path(map: &SemanticMap, lane: &LaneId) -> Result<LanePath, ValidationError> {
    let l = map.lane(lane).map_err(|e| ValidationError::new(e.to_string()))?;
    let mut ids = Vec::new();
    if let Some(p) = map.predecessors(lane).first() {
        ids.push(p.clone());
    }
    ids.push(lane.clone());
    if let Some(s) = l.successors.first() {
        ids.push(s.clone());
    }
    LanePath::new(map, &ids).map_err(|e| ValidationError::new(e.to_string()))
}

/// TTC and time gaps with respect to agents on the target lane of a lane change.
pub fn lane_change_metrics(log: &SimLog, tag: &ScenarioTag, map: &SemanticMap) -> Result<LaneChangeMetrics, ValidationError> {
    if !matches!(tag.kind, TagKind::LaneChange | TagKind::Merge) {
        return Err(ValidationError::new(format!("{} is not a lane change tag", tag.kind.as_str())));
    }
    let steps = steps_in(log, tag)?;
    let lane = tag
        .lane
        .as_ref()
        .ok_or_else(|| ValidationError::new("lane change tag has no target lane"))?;
    let path = target_path(map, lane)?;
    let mut out = LaneChangeMetrics {
        ttc_min: None,
        lead_time_gap_min: None,
        rear_time_gap_min: None,
    };
    let fold = |acc: Option<f64>, x: f64| Some(acc.map_or(x, |a: f64| a.min(x)));
    for s in steps {
        let on_target: Vec<ObjectSnapshot> = s
            .agents
            .iter()
            .filter(|a| path.project(a.pose.position()).distance <= LANE_ASSOCIATION_GATE)
            .cloned()
            .collect();
        let half = s.ego.dims.length / 2.0;
        if let Some((_, gap)) = path.lead_object(s.ego.center(), half, &on_target) {
            out.lead_time_gap_min = fold(out.lead_time_gap_min, gap.max(0.0) / s.ego.velocity.max(TIME_GAP_SPEED_FLOOR));
        }
        if let Some((id, gap)) = path.rear_object(s.ego.center(), half, &on_target) {
            let v = on_target.iter().find(|a| a.id == id).map_or(0.0, |a| a.speed());
            out.rear_time_gap_min = fold(out.rear_time_gap_min, gap.max(0.0) / v.max(TIME_GAP_SPEED_FLOOR));
        }
        if let Some(t) = ttc_at_step(&ego_snapshot(&s.ego), &on_target, TTC_HORIZON) {
            out.ttc_min = fold(out.ttc_min, t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VruLocation {
    OnCrosswalk,
    OnRoad,
    OffRoad,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassingRecord {
    pub time: f64,
    pub agent: String,
    pub relative_speed: f64,
    pub clearance: f64,
    pub location: VruLocation,
}

/// One record per step and VRU passed closer than [`VRU_CLEARANCE_WINDOW`].
pub fn vru_interaction_metrics(log: &SimLog, tag: &ScenarioTag, map: &SemanticMap) -> Result<Vec<PassingRecord>, ValidationError> {
    if !matches!(tag.kind, TagKind::PedestrianInteraction | TagKind::CyclistInteraction) {
        return Err(ValidationError::new(format!("{} is not a VRU tag", tag.kind.as_str())));
    }
    let mut out = Vec::new();
    for s in steps_in(log, tag)? {
        let fp = s.ego.footprint();
        for a in s.agents.iter().filter(|a| a.category.is_vru()) {
            if !tag.subjects.is_empty() && !tag.subjects.contains(&a.id) {
                continue;
            }
            let clearance = fp.distance_to(&a.footprint());
            if clearance >= VRU_CLEARANCE_WINDOW {
                continue;
            }
            let p = a.pose.position();
            let location = if map.on_crosswalk(p) {
                VruLocation::OnCrosswalk
            } else if map.point_in_driveable_area(p) {
                VruLocation::OnRoad
            } else {
                VruLocation::OffRoad
            };
            out.push(PassingRecord {
                time: s.time,
                agent: a.id.clone(),
                relative_speed: s.ego.velocity_vector().sub(a.velocity).norm(),
                clearance,
                location,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yield,
    Go,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub zone: Vec<Point2>,
    /// The conflicting agent, if any agent enters the zone.
    pub agent: Option<String>,
    pub planner_decision: Decision,
    pub expert_decision: Decision,
    pub agree: bool,
}

fn first_entry<'a>(zone: &Polygon, steps: impl Iterator<Item = (f64, &'a OrientedBox)>) -> Option<f64> {
    for (t, b) in steps {
        if zone.intersects_box(b) {
            return Some(t);
        }
    }
    None
}

fn square_zone(c: Point2, heading: f64) -> Polygon {
    let pose = Pose2D::new(c.x, c.y, heading);
    let h = CONFLICT_ZONE_SIZE / 2.0;
    Polygon::new(OrientedBox::new(pose, h, h).corners().to_vec()).expect("square is simple")
}

/// Crosswalks, those used by the tagged pedestrians first, or squares where the turning
/// lane crosses its conflicting lanes.
fn conflict_zones(expert: &[EgoState], tag: &ScenarioTag, tracks: &[TrackedObject], map: &SemanticMap) -> Vec<Polygon> {
    match tag.kind {
        TagKind::PedestrianInteraction => {
            let used = |cw: &Polygon| {
                tracks
                    .iter()
                    .filter(|t| tag.subjects.is_empty() || tag.subjects.contains(&t.id))
                    .any(|t| t.states.iter().any(|s| cw.contains(s.pose.position())))
            };
            let mut zones: Vec<(bool, Polygon)> = map.crosswalks().iter().map(|cw| (!used(cw), cw.clone())).collect();
            zones.sort_by_key(|z| z.0);
            zones.into_iter().map(|z| z.1).collect()
        }
        _ => {
            let area = IntersectionArea::new(map);
            let in_tag: Vec<&EgoState> = expert
                .iter()
                .filter(|e| e.time >= tag.t_start - 1e-9 && e.time <= tag.t_end + 1e-9)
                .collect();
            let Some(mid) = in_tag.get(in_tag.len() / 2) else { return vec![] };
            let own_id = map.nearest_aligned_lane(mid.center(), mid.pose.heading).lane_id;
            let Ok(own) = map.lane(&own_id) else { return vec![] };
            let mut zones = Vec::new();
            for c in area.conflicts_of(&own_id) {
                let other = map.lane(&c).expect("lane from map");
                for u in own.centerline.points().windows(2) {
                    for v in other.centerline.points().windows(2) {
                        if let Some(p) = segment_intersection(u[0], u[1], v[0], v[1]) {
                            let d = u[1].sub(u[0]);
                            zones.push(square_zone(p, d.y.atan2(d.x)));
                        }
                    }
                }
            }
            zones
        }
    }
}

/// Go/yield agreement between the simulated ego and the expert at a
/// crosswalk or unprotected left turn. The simulated decision is taken
/// against the agents as they moved in the simulation, the expert decision
/// against the recorded tracks. `Ok(None)` when neither ego enters a zone.
pub fn decision_agreement(
    log: &SimLog,
    expert: &[EgoState],
    tag: &ScenarioTag,
    tracks: &[TrackedObject],
    map: &SemanticMap,
) -> Result<Option<DecisionRecord>, ValidationError> {
    if !matches!(tag.kind, TagKind::PedestrianInteraction | TagKind::TurnLeftUnprotected) {
        return Err(ValidationError::new(format!("{} has no right-of-way decision", tag.kind.as_str())));
    }
    let from = tag.t_start;
    let sim_boxes: Vec<(f64, OrientedBox)> = log.steps.iter().filter(|s| s.time >= from - 1e-9).map(|s| (s.time, s.ego.footprint())).collect();
    let exp_boxes: Vec<(f64, OrientedBox)> = expert.iter().filter(|e| e.time >= from - 1e-9).map(|e| (e.time, e.footprint())).collect();
    for zone in conflict_zones(expert, tag, tracks, map) {
        let sim_ego = first_entry(&zone, sim_boxes.iter().map(|(t, b)| (*t, b)));
        let exp_ego = first_entry(&zone, exp_boxes.iter().map(|(t, b)| (*t, b)));
        if sim_ego.is_none() && exp_ego.is_none() {
            continue;
        }
        // Earliest agent entry, in the simulation and in the recording.
        let candidates: Vec<&TrackedObject> = tracks
            .iter()
            .filter(|t| tag.kind != TagKind::PedestrianInteraction || tag.subjects.is_empty() || tag.subjects.contains(&t.id))
            .collect();
        let mut agent: Option<(f64, String)> = None;
        let mut sim_agent: Option<f64> = None;
        for tr in &candidates {
            let boxes: Vec<(f64, OrientedBox)> = tr
                .states
                .iter()
                .filter(|s| s.time >= from - 1e-9)
                .map(|s| (s.time, OrientedBox::new(s.pose, tr.length / 2.0, tr.width / 2.0)))
                .collect();
            if let Some(t) = first_entry(&zone, boxes.iter().map(|(t, b)| (*t, b))) {
                if agent.as_ref().is_none_or(|(a, _)| t < *a) {
                    agent = Some((t, tr.id.clone()));
                }
            }
        }
        if let Some((_, id)) = &agent {
            let boxes: Vec<(f64, OrientedBox)> = log
                .steps
                .iter()
                .filter(|s| s.time >= from - 1e-9)
                .filter_map(|s| s.agents.iter().find(|a| &a.id == id).map(|a| (s.time, a.footprint())))
                .collect();
            sim_agent = first_entry(&zone, boxes.iter().map(|(t, b)| (*t, b)));
        }
        let decide = |ego: Option<f64>, other: Option<f64>| match (ego, other) {
            (None, _) => Decision::Yield,
            (Some(_), None) => Decision::Go,
            (Some(e), Some(a)) => {
                if e < a {
                    Decision::Go
                } else {
                    Decision::Yield
                }
            }
        };
        let planner_decision = decide(sim_ego, sim_agent);
        let expert_decision = decide(exp_ego, agent.as_ref().map(|a| a.0));
        return Ok(Some(DecisionRecord {
            zone: zone.points().to_vec(),
            agent: agent.map(|a| a.1),
            planner_decision,
            expert_decision,
            agree: planner_decision == expert_decision,
        }));
    }
    Ok(None)
}
