//! Common metric families computed on a finished simulation log: safety,
//! similarity to the expert, dynamics (comfort and feasibility) and goal
//! progress.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::geometry::{derivative, differentiate, EgoState, ObjectSnapshot, OrientedBox, Point2, Trajectory};
use crate::map::{Route, SemanticMap};
use crate::scenario::Scenario;
use crate::sim::{ego_snapshot, SimLog, SimMode};

pub const TTC_HORIZON: f64 = 5.0;
pub const TTC_SWEEP_STEP: f64 = 0.05;
pub const TTC_RESOLUTION: f64 = 1e-3;
pub const TIME_GAP_SPEED_FLOOR: f64 = 0.5;
pub const PASSING_WINDOW: f64 = 3.0;
pub const PASSING_BIN: f64 = 0.5;
pub const STOP_SPEED: f64 = 0.1;
pub const STOP_DURATION: f64 = 1.0;
pub const RATIO_FLOOR: f64 = 0.01;
pub const MIN_COMPARE_SPAN: f64 = 2.0;
pub const OSCILLATION_AMPLITUDE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// `None` when the metric does not apply, e.g. TTC without any conflict.
    pub value: Option<f64>,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl MetricValue {
    pub fn new(value: f64, unit: &str) -> Self {
        Self {
            value: Some(value),
            unit: unit.to_string(),
            series: None,
            pass_threshold: None,
            detail: None,
        }
    }

    pub fn maybe(value: Option<f64>, unit: &str) -> Self {
        Self {
            value,
            ..Self::new(0.0, unit)
        }
    }

    pub fn flag(value: bool) -> Self {
        Self::new(if value { 1.0 } else { 0.0 }, "bool")
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.pass_threshold = Some(t);
        self
    }
}

/// Metric values keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricSet(pub BTreeMap<String, MetricValue>);

impl MetricSet {
    pub fn insert(&mut self, name: &str, value: MetricValue) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.0.get(name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.0.get(name).and_then(|m| m.value)
    }

    pub fn extend(&mut self, other: MetricSet) {
        self.0.extend(other.0);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortLimits {
    pub long_accel: f64,
    pub lat_accel: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
    pub steering_rate: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self {
            long_accel: 3.0,
            lat_accel: 3.0,
            jerk: 5.0,
            yaw_rate: 1.0,
            steering_rate: 0.5,
        }
    }
}

fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Nearest-rank percentile of unsorted finite values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

// ---------------------------------------------------------------------------
// Time to collision

/// Time interval within `[lo, hi]` where `|p + q·t| <= r`, if any.
fn slab(p: f64, q: f64, r: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if q == 0.0 {
        return (p.abs() <= r).then_some((lo, hi));
    }
    let (a, b) = ((-r - p) / q, (r - p) / q);
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let (a, b) = (a.max(lo), b.min(hi));
    (a <= b).then_some((a, b))
}

/// Whether two boxes moving with constant velocities and headings overlap
/// at some time in `[t0, t1]`. The relative motion is a translation, so
/// each separating-axis condition holds on an interval of time.
pub fn overlap_during(a: &OrientedBox, va: Point2, b: &OrientedBox, vb: Point2, t0: f64, t1: f64) -> bool {
    let d0 = b.center.position().sub(a.center.position());
    let dv = vb.sub(va);
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    let (mut lo, mut hi) = (t0, t1);
    for axis in [a0, a1, b0, b1] {
        let r = a.radius_on(axis) + b.radius_on(axis);
        match slab(d0.dot(axis), dv.dot(axis), r, lo, hi) {
            Some((l, h)) => {
                lo = l;
                hi = h;
            }
            None => return false,
        }
    }
    true
}

/// First time in `[0, horizon]` at which the two bodies overlap under
/// constant-velocity motion: swept in [`TTC_SWEEP_STEP`] windows, then
/// bisected to [`TTC_RESOLUTION`].
pub fn ttc_pair(a: &ObjectSnapshot, b: &ObjectSnapshot, horizon: f64) -> Option<f64> {
    let (fa, fb) = (a.footprint(), b.footprint());
    if fa.overlaps(&fb) {
        return Some(0.0);
    }
    let hit = |t0: f64, t1: f64| overlap_during(&fa, a.velocity, &fb, b.velocity, t0, t1);
    if !hit(0.0, horizon) {
        return None;
    }
    let windows = (horizon / TTC_SWEEP_STEP).ceil() as usize;
    for k in 0..windows {
        let (mut lo, mut hi) = (k as f64 * TTC_SWEEP_STEP, ((k + 1) as f64 * TTC_SWEEP_STEP).min(horizon));
        if !hit(lo, hi) {
            continue;
        }
        while hi - lo > TTC_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            if hit(lo, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Some(hi);
    }
    None
}

/// Smallest TTC between the ego and any agent.
pub fn ttc_at_step(ego: &ObjectSnapshot, agents: &[ObjectSnapshot], horizon: f64) -> Option<f64> {
    agents
        .iter()
        .filter_map(|a| ttc_pair(ego, a, horizon))
        .min_by(f64::total_cmp)
}

// ---------------------------------------------------------------------------
// Safety

/// Longitudinal overlap and lateral clearance of `other` in the frame of `ego`.
fn side_by_side(ego: &OrientedBox, other: &OrientedBox) -> (bool, f64) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in other.corners() {
        let l = ego.center.to_local(c);
        xmin = xmin.min(l.x);
        xmax = xmax.max(l.x);
        ymin = ymin.min(l.y);
        ymax = ymax.max(l.y);
    }
    let overlap = xmin <= ego.half_length && xmax >= -ego.half_length;
    let clearance = if ymin > ego.half_width {
        ymin - ego.half_width
    } else if ymax < -ego.half_width {
        -ego.half_width - ymax
    } else {
        0.0
    };
    (overlap, clearance)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassingEvent {
    pub agent: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Smallest lateral clearance during the event, m.
    pub clearance: f64,
    /// |ego velocity − agent velocity| at the tightest step, m/s.
    pub relative_speed: f64,
}

fn passing_events(log: &SimLog) -> Vec<PassingEvent> {
    let mut open: BTreeMap<String, PassingEvent> = BTreeMap::new();
    let mut done = Vec::new();
    for step in &log.steps {
        let fp = step.ego.footprint();
        let ev = step.ego.velocity_vector();
        let mut seen = Vec::new();
        for a in &step.agents {
            let (overlap, clearance) = side_by_side(&fp, &a.footprint());
            if !(overlap && clearance < PASSING_WINDOW) {
                continue;
            }
            seen.push(a.id.clone());
            let rel = ev.sub(a.velocity).norm();
            let e = open.entry(a.id.clone()).or_insert_with(|| PassingEvent {
                agent: a.id.clone(),
                t_start: step.time,
                t_end: step.time,
                clearance,
                relative_speed: rel,
            });
            e.t_end = step.time;
            if clearance < e.clearance {
                e.clearance = clearance;
                e.relative_speed = rel;
            }
        }
        let closed: Vec<String> = open.keys().filter(|k| !seen.contains(k)).cloned().collect();
        for k in closed {
            done.push(open.remove(&k).expect("present"));
        }
    }
    done.extend(open.into_values());
    done.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then_with(|| a.agent.cmp(&b.agent)));
    done
}

fn passing_bins(events: &[PassingEvent]) -> serde_json::Value {
    let mut bins: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for e in events {
        let k = (e.clearance / PASSING_BIN).floor() as i64;
        let b = bins.entry(k).or_default();
        b.0 += 1;
        b.1 += e.relative_speed;
    }
    serde_json::Value::Array(
        bins.into_iter()
            .map(|(k, (n, sum))| {
                json!({
                    "clearance_min": k as f64 * PASSING_BIN,
                    "clearance_max": (k + 1) as f64 * PASSING_BIN,
                    "count": n,
                    "mean_relative_speed": sum / n as f64,
                })
            })
            .collect(),
    )
}

pub fn safety_metrics(log: &SimLog, map: &SemanticMap, route: &Route) -> MetricSet {
    let mut out = MetricSet::default();
    let mut first_collision: Option<(f64, String, bool)> = None;
    let mut collided: Vec<String> = Vec::new();
    let mut off_road_steps = 0usize;
    let mut gaps = Vec::new();
    let mut ttcs = Vec::new();
    for step in &log.steps {
        let fp = step.ego.footprint();
        for a in &step.agents {
            if fp.overlaps(&a.footprint()) {
                if first_collision.is_none() {
                    let behind = step.ego.pose.to_local(a.pose.position()).x < 0.0;
                    first_collision = Some((step.time, a.id.clone(), behind));
                }
                if !collided.contains(&a.id) {
                    collided.push(a.id.clone());
                }
            }
        }
        if !map.in_driveable_area(&fp) {
            off_road_steps += 1;
        }
        if let Some((_, gap)) = route.path.lead_object(step.ego.center(), step.ego.dims.length / 2.0, &step.agents) {
            gaps.push(gap.max(0.0) / step.ego.velocity.max(TIME_GAP_SPEED_FLOOR));
        }
        if let Some(t) = ttc_at_step(&ego_snapshot(&step.ego), &step.agents, TTC_HORIZON) {
            ttcs.push(t);
        }
    }
    let collision = MetricValue::flag(first_collision.is_some()).with_detail(match &first_collision {
        Some((t, id, behind)) => json!({"time": t, "agent": id, "rear_end": behind, "agents": collided}),
        None => json!(null),
    });
    out.insert("collision", MetricValue { detail: collision.detail.filter(|d| !d.is_null()), ..collision });
    let n = log.steps.len().max(1) as f64;
    out.insert("off_road", MetricValue::flag(off_road_steps > 0));
    out.insert("off_road_fraction", MetricValue::new(off_road_steps as f64 / n, "ratio"));
    out.insert("time_gap_min", MetricValue::maybe(gaps.iter().copied().reduce(f64::min), "s"));
    out.insert("time_gap_p10", MetricValue::maybe(percentile(&gaps, 10.0), "s"));
    out.insert("ttc_min", MetricValue::maybe(ttcs.iter().copied().reduce(f64::min), "s"));
    out.insert("ttc_p10", MetricValue::maybe(percentile(&ttcs, 10.0), "s"));
    let events = passing_events(log);
    out.insert(
        "passing_profile",
        MetricValue::new(events.len() as f64, "count").with_detail(json!({
            "events": events,
            "bins": passing_bins(&events),
        })),
    );
    out
}

// ---------------------------------------------------------------------------
// Similarity to the expert

/// The expert path as an arc-length parameterized polyline that remembers
/// when each vertex was driven, so that standstill and self-crossing
/// ambiguities resolve to the moment closest in time.
struct ReferencePath {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
    times: Vec<f64>,
    speeds: Vec<f64>,
}

struct RefProjection {
    s: f64,
    d: f64,
    vertex: Option<usize>,
}

fn time_distance(t: f64, a: f64, b: f64) -> f64 {
    if t < a {
        a - t
    } else if t > b {
        t - b
    } else {
        0.0
    }
}

impl ReferencePath {
    fn new(traj: &Trajectory) -> Self {
        let samples = traj.samples();
        let points: Vec<Point2> = samples.iter().map(|s| s.pose.position()).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let last = cumulative[cumulative.len() - 1];
            cumulative.push(last + w[0].dist(w[1]));
        }
        Self {
            times: samples.iter().map(|s| s.time).collect(),
            speeds: (0..samples.len()).map(|i| sample_speed(traj, i)).collect(),
            points,
            cumulative,
        }
    }

    fn project(&self, p: Point2, t: f64) -> RefProjection {
        let exact = (0..self.points.len())
            .filter(|&j| self.points[j] == p)
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()));
        if let Some(j) = exact {
            return RefProjection {
                s: self.cumulative[j],
                d: 0.0,
                vertex: Some(j),
            };
        }
        let mut best: Option<(f64, f64, RefProjection)> = None;
        for j in 0..self.points.len() - 1 {
            let (a, b) = (self.points[j], self.points[j + 1]);
            let len = self.cumulative[j + 1] - self.cumulative[j];
            if len == 0.0 {
                continue;
            }
            let (dist, f) = crate::geometry::point_segment_projection(p, a, b);
            let td = time_distance(t, self.times[j], self.times[j + 1]);
            let better = match &best {
                None => true,
                Some((bd, bt, _)) => dist < *bd || (dist == *bd && td < *bt),
            };
            if better {
                let d = b.sub(a).cross(p.sub(a.lerp(b, f))) / len;
                best = Some((
                    dist,
                    td,
                    RefProjection {
                        s: self.cumulative[j] + f * len,
                        d: if dist == 0.0 { 0.0 } else { d.signum() * dist },
                        vertex: None,
                    },
                ));
            }
        }
        best.map(|b| b.2).unwrap_or(RefProjection {
            s: 0.0,
            d: p.dist(self.points[0]),
            vertex: None,
        })
    }

    /// Expert speed at arc length `s`, taken from the covering segment
    /// driven closest in time to `t`.
    fn speed_at(&self, proj: &RefProjection, t: f64) -> f64 {
        if let Some(j) = proj.vertex {
            return self.speeds[j];
        }
        let s = proj.s;
        let n = self.points.len();
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n - 1 {
            if self.cumulative[j] <= s && s <= self.cumulative[j + 1] {
                let td = time_distance(t, self.times[j], self.times[j + 1]);
                if best.is_none_or(|(b, _)| td < b) {
                    best = Some((td, j));
                }
            }
        }
        match best {
            Some((_, j)) => {
                let len = self.cumulative[j + 1] - self.cumulative[j];
                let f = if len > 0.0 { (s - self.cumulative[j]) / len } else { 0.0 };
                crate::geometry::lerp(self.speeds[j], self.speeds[j + 1], f)
            }
            None if s <= 0.0 => self.speeds[0],
            None => self.speeds[n - 1],
        }
    }

    fn stop_arc(&self) -> Option<f64> {
        stop_index(&self.times, &self.speeds).map(|i| self.cumulative[i])
    }
}

fn sample_speed(traj: &Trajectory, i: usize) -> f64 {
    let s = traj.samples();
    match s[i].velocity {
        Some(v) => v,
        None => {
            let j = if i + 1 < s.len() { i } else { i - 1 };
            s[j].pose.distance(&s[j + 1].pose) / (s[j + 1].time - s[j].time)
        }
    }
}

/// First sample of a standstill (speed below [`STOP_SPEED`]) lasting at
/// least [`STOP_DURATION`].
fn stop_index(times: &[f64], speeds: &[f64]) -> Option<usize> {
    let mut start: Option<usize> = None;
    for i in 0..speeds.len() {
        if speeds[i] < STOP_SPEED {
            let s = *start.get_or_insert(i);
            if times[i] - times[s] >= STOP_DURATION - 1e-9 {
                return Some(s);
            }
        } else {
            start = None;
        }
    }
    None
}

/// Samples of `traj` with times in `[t0, t1]`.
fn window(traj: &Trajectory, t0: f64, t1: f64) -> Option<Trajectory> {
    let s: Vec<_> = traj
        .samples()
        .iter()
        .filter(|s| s.time >= t0 - 1e-9 && s.time <= t1 + 1e-9)
        .copied()
        .collect();
    Trajectory::new(s).ok()
}

fn accel_jerk(traj: &Trajectory) -> Option<(Vec<f64>, Vec<f64>)> {
    let dt = traj.uniform_dt()?;
    if traj.len() < 4 {
        return None;
    }
    let v: Vec<f64> = (0..traj.len()).map(|i| sample_speed(traj, i)).collect();
    let a = derivative(&v, dt);
    let j = derivative(&a, dt);
    Some((a, j))
}

const SIMILARITY_NAMES: [(&str, &str); 7] = [
    ("long_vel_err", "m/s"),
    ("lat_pos_err", "m"),
    ("lat_pos_err_max", "m"),
    ("stop_pos_err", "m"),
    ("jerk_ratio", "ratio"),
    ("accel_ratio", "ratio"),
    ("similarity_span", "s"),
];

fn absent_similarity() -> MetricSet {
    let mut out = MetricSet::default();
    for (n, u) in SIMILARITY_NAMES {
        out.insert(n, MetricValue::maybe(None, u));
    }
    out
}

/// Compares an ego trajectory with the expert over their common time span.
/// Errors are measured in the expert path frame, the velocity error at equal
/// arc length.
pub fn similarity_metrics(ego: &Trajectory, expert: &Trajectory) -> MetricSet {
    let t0 = ego.start_time().max(expert.start_time());
    let t1 = ego.end_time().min(expert.end_time());
    if expert.end_time() - expert.start_time() < MIN_COMPARE_SPAN || t1 - t0 < MIN_COMPARE_SPAN - 1e-9 {
        return absent_similarity();
    }
    let (Some(ego_w), Some(exp_w)) = (window(ego, t0, t1), window(expert, t0, t1)) else {
        return absent_similarity();
    };
    let reference = ReferencePath::new(expert);
    let mut vel_err = Vec::with_capacity(ego_w.len());
    let mut lat = Vec::with_capacity(ego_w.len());
    let projections: Vec<RefProjection> = ego_w
        .samples()
        .iter()
        .map(|s| reference.project(s.pose.position(), s.time))
        .collect();
    for (i, (s, p)) in ego_w.samples().iter().zip(&projections).enumerate() {
        vel_err.push(sample_speed(&ego_w, i) - reference.speed_at(p, s.time));
        lat.push(p.d);
    }
    let mut out = MetricSet::default();
    out.insert("long_vel_err", MetricValue::new(rms(&vel_err), "m/s"));
    out.insert("lat_pos_err", MetricValue::new(rms(&lat), "m"));
    out.insert("lat_pos_err_max", MetricValue::new(max_abs(&lat), "m"));

    let ego_times: Vec<f64> = ego_w.samples().iter().map(|s| s.time).collect();
    let ego_speeds: Vec<f64> = (0..ego_w.len()).map(|i| sample_speed(&ego_w, i)).collect();
    let exp_ref = ReferencePath::new(&exp_w);
    let stop_err = match (stop_index(&ego_times, &ego_speeds), exp_ref.stop_arc()) {
        (Some(i), Some(_)) => {
            let expert_stop = stop_index(&exp_ref.times, &exp_ref.speeds).expect("stop found above");
            let s_exp = reference.project(exp_w.samples()[expert_stop].pose.position(), exp_ref.times[expert_stop]).s;
            Some((projections[i].s - s_exp).abs())
        }
        _ => None,
    };
    out.insert("stop_pos_err", MetricValue::maybe(stop_err, "m"));

    let (ratio_j, ratio_a) = match (accel_jerk(&ego_w), accel_jerk(&exp_w)) {
        (Some((ea, ej)), Some((xa, xj))) => (
            Some(rms(&ej).max(RATIO_FLOOR) / rms(&xj).max(RATIO_FLOOR)),
            Some(rms(&ea).max(RATIO_FLOOR) / rms(&xa).max(RATIO_FLOOR)),
        ),
        _ => (None, None),
    };
    out.insert("jerk_ratio", MetricValue::maybe(ratio_j, "ratio"));
    out.insert("accel_ratio", MetricValue::maybe(ratio_a, "ratio"));
    out.insert("similarity_span", MetricValue::new(t1 - t0, "s"));
    out
}

/// Open-loop similarity: every plan against the expert's future, averaged
/// over the plans for which a value exists.
pub fn open_loop_similarity(log: &SimLog, expert: &Trajectory) -> MetricSet {
    let per_plan: Vec<MetricSet> = log
        .plans
        .iter()
        .map(|p| similarity_metrics(&p.trajectory, expert))
        .collect();
    let mut out = MetricSet::default();
    for (name, unit) in SIMILARITY_NAMES {
        let vals: Vec<f64> = per_plan.iter().filter_map(|m| m.value(name)).collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let mut mv = MetricValue::maybe(mean, unit);
        if name == "lat_pos_err_max" {
            mv.value = vals.iter().copied().reduce(f64::max);
        }
        out.insert(name, mv);
    }
    out.insert("similarity_plans", MetricValue::new(per_plan.iter().filter(|m| m.value("lat_pos_err").is_some()).count() as f64, "count"));
    out
}

// ---------------------------------------------------------------------------
// Dynamics

/// Steering sign reversals with hysteresis `amplitude`, per minute.
pub fn oscillation_rate(steering: &[f64], duration: f64, amplitude: f64) -> f64 {
    let mut side = 0i8;
    let mut reversals = 0usize;
    for &d in steering {
        let s = if d > amplitude {
            1
        } else if d < -amplitude {
            -1
        } else {
            0
        };
        if s != 0 {
            if side != 0 && s != side {
                reversals += 1;
            }
            side = s;
        }
    }
    if duration > 0.0 {
        reversals as f64 * 60.0 / duration
    } else {
        0.0
    }
}

fn fraction_beyond(xs: &[f64], limit: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().filter(|x| x.abs() > limit).count() as f64 / xs.len() as f64
}

const DYNAMICS_NAMES: [(&str, &str); 17] = [
    ("jerk_max", "m/s^3"),
    ("jerk_rms", "m/s^3"),
    ("long_accel_max", "m/s^2"),
    ("long_accel_rms", "m/s^2"),
    ("lat_accel_max", "m/s^2"),
    ("lat_accel_rms", "m/s^2"),
    ("steering_rate_max", "rad/s"),
    ("steering_rate_rms", "rad/s"),
    ("yaw_rate_max", "rad/s"),
    ("yaw_rate_rms", "rad/s"),
    ("oscillation", "1/min"),
    ("long_accel_violation", "ratio"),
    ("lat_accel_violation", "ratio"),
    ("jerk_violation", "ratio"),
    ("yaw_rate_violation", "ratio"),
    ("steering_rate_violation", "ratio"),
    ("comfort_violation", "ratio"),
];

/// Comfort and feasibility. Longitudinal acceleration and steering angle are
/// the logged vehicle-model signals; jerk, steering rate and yaw rate are
/// their numerical derivatives.
pub fn dynamics_metrics(states: &[EgoState], limits: &ComfortLimits) -> MetricSet {
    let mut out = MetricSet::default();
    let duration = match (states.first(), states.last()) {
        (Some(a), Some(b)) => b.time - a.time,
        _ => 0.0,
    };
    let traj = Trajectory::from_ego_states(states).ok();
    let profile = traj.as_ref().and_then(|t| differentiate(t).ok());
    let (Some(profile), true) = (profile, duration >= 1.0 - 1e-9) else {
        for (n, u) in DYNAMICS_NAMES {
            out.insert(n, MetricValue::maybe(None, u));
        }
        return out;
    };
    let dt = profile.dt;
    let accel: Vec<f64> = states.iter().map(|s| s.acceleration).collect();
    let jerk = derivative(&accel, dt);
    let steer: Vec<f64> = states.iter().map(|s| s.steering_angle).collect();
    let steer_rate = derivative(&steer, dt);
    let yaw = &profile.yaw_rate;
    let lat: Vec<f64> = states.iter().zip(yaw).map(|(s, w)| s.velocity * w).collect();
    let put = |out: &mut MetricSet, name: &str, unit: &str, xs: &[f64], limit: f64| {
        out.insert(&format!("{name}_max"), MetricValue::new(max_abs(xs), unit).with_threshold(limit));
        out.insert(&format!("{name}_rms"), MetricValue::new(rms(xs), unit));
        out.insert(&format!("{name}_violation"), MetricValue::new(fraction_beyond(xs, limit), "ratio"));
    };
    put(&mut out, "jerk", "m/s^3", &jerk, limits.jerk);
    put(&mut out, "long_accel", "m/s^2", &accel, limits.long_accel);
    put(&mut out, "lat_accel", "m/s^2", &lat, limits.lat_accel);
    put(&mut out, "steering_rate", "rad/s", &steer_rate, limits.steering_rate);
    put(&mut out, "yaw_rate", "rad/s", yaw, limits.yaw_rate);
    let any = (0..states.len())
        .filter(|&i| {
            accel[i].abs() > limits.long_accel
                || lat[i].abs() > limits.lat_accel
                || jerk[i].abs() > limits.jerk
                || yaw[i].abs() > limits.yaw_rate
                || steer_rate[i].abs() > limits.steering_rate
        })
        .count();
    out.insert("comfort_violation", MetricValue::new(any as f64 / states.len() as f64, "ratio"));
    out.insert("oscillation", MetricValue::new(oscillation_rate(&steer, duration, OSCILLATION_AMPLITUDE), "1/min"));
    out
}

// ---------------------------------------------------------------------------
// Goal

pub fn goal_metrics(states: &[EgoState], route: &Route) -> MetricSet {
    let mut out = MetricSet::default();
    match states.last() {
        Some(last) => {
            let p = last.pose.position();
            out.insert("progress", MetricValue::new(route.progress(p), "ratio"));
            out.insert("final_goal_distance", MetricValue::new(p.dist(route.goal.position()), "m"));
        }
        None => {
            out.insert("progress", MetricValue::maybe(None, "ratio"));
            out.insert("final_goal_distance", MetricValue::maybe(None, "m"));
        }
    }
    out
}

/// All common metrics for one finished run. Open-loop runs measure
/// similarity on the plans; closed-loop runs on the driven trajectory.
pub fn evaluate(log: &SimLog, scenario: &Scenario, comfort: &ComfortLimits) -> MetricSet {
    let states = log.ego_states();
    let expert = Trajectory::from_ego_states(&scenario.expert).expect("validated expert log");
    let mut out = safety_metrics(log, &scenario.map, &scenario.route);
    out.extend(match (log.mode, log.driven_trajectory()) {
        (SimMode::OpenLoop, _) => open_loop_similarity(log, &expert),
        (_, Some(driven)) => similarity_metrics(&driven, &expert),
        (_, None) => absent_similarity(),
    });
    out.extend(dynamics_metrics(&states, comfort));
    out.extend(goal_metrics(&states, &scenario.route));
    out
}
