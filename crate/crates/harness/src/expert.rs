//! Synthetic expert driving and scripted agent motion.
//!
//! The expert is the kinematic vehicle model steered by pure pursuit along a
//! reference path, with IDM speed control toward the vehicles ahead on that
//! path and toward virtual stop points (yielding, stop lines).

use planbench_core::agents::{idm_accel, replay_snapshot, IdmParams};
use planbench_core::controller::{control_toward, lookahead_distance, lookahead_point, ControllerGains};
use planbench_core::geometry::{AgentCategory, EgoState, Point2, Pose2D, TrackedObject, VehicleDims};
use planbench_core::map::Polyline;
use planbench_core::scenario::{AgentRecord, EgoRecord, TrackSpec, GRID_DT};
use planbench_core::vehicle::{clamp_control, step, ControlInput, ModelLimits};

/// Lateral acceleration the expert allows itself in curves.
pub const CURVE_LAT_ACCEL: f64 = 1.5;
/// Deceleration used to slow down ahead of curves.
pub const CURVE_DECEL: f64 = 1.2;
/// Braking rate above which the expert starts stopping for a stop point.
const STOP_DECEL: f64 = 1.0;
/// Distance short of a stop point where the front bumper comes to rest.
const STOP_MARGIN: f64 = 1.0;
const LEAD_LATERAL_MARGIN: f64 = 0.3;
const PATH_WINDOW: f64 = 60.0;

/// Piecewise-linear speed over time, held constant outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile(pub Vec<(f64, f64)>);

impl Profile {
    pub fn constant(v: f64) -> Self {
        Profile(vec![(0.0, v)])
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.0;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if t <= w[1].0 {
                let u = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + u * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }

    /// Adds `dv` to every knot.
    pub fn shifted(&self, dv: f64) -> Self {
        Profile(self.0.iter().map(|&(t, v)| (t, (v + dv).max(0.0))).collect())
    }
}

/// A track that moves its box centre along `path` from arc length `s0`.
#[allow(clippy::too_many_arguments)]
pub fn scripted_track(
    id: &str,
    category: AgentCategory,
    length: f64,
    width: f64,
    path: &Polyline,
    s0: f64,
    speed: &Profile,
    duration: f64,
) -> TrackSpec {
    let n = (duration / GRID_DT).round() as usize;
    let mut s = s0;
    let mut states = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * GRID_DT;
        let at_end = s >= path.length();
        let v = if at_end { 0.0 } else { speed.at(t) };
        let pose = path.pose_at(s.min(path.length()));
        states.push(AgentRecord {
            t,
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            vx: v * pose.heading.cos(),
            vy: v * pose.heading.sin(),
        });
        s += 0.5 * (speed.at(t) + speed.at(t + GRID_DT)) * GRID_DT;
    }
    TrackSpec {
        id: id.to_string(),
        category,
        length,
        width,
        states,
    }
}

pub fn to_tracked(spec: &TrackSpec) -> TrackedObject {
    TrackedObject {
        id: spec.id.clone(),
        category: spec.category,
        states: spec
            .states
            .iter()
            .map(|s| planbench_core::geometry::AgentState {
                time: s.t,
                pose: Pose2D::new(s.x, s.y, s.heading),
                velocity: Point2::new(s.vx, s.vy),
            })
            .collect(),
        length: spec.length,
        width: spec.width,
    }
}

/// When a virtual stop point stops applying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Release {
    /// At a fixed time.
    At(f64),
    /// Once the ego has stood still for this long.
    AfterStopping(f64),
}

/// A virtual stop point for the front bumper, as arc length along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hold {
    pub s: f64,
    pub release: Release,
}

/// Constant braking command over a time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakePulse {
    pub start: f64,
    pub end: f64,
    pub decel: f64,
}

pub struct ExpertPlan {
    pub path: Polyline,
    /// Arc length of the starting rear-axle position.
    pub start_s: f64,
    pub start_speed: f64,
    pub cruise: f64,
    pub duration: f64,
    pub holds: Vec<Hold>,
    pub brake: Option<BrakePulse>,
    /// Agents the expert does not treat as leaders.
    pub ignore: Vec<String>,
}

impl ExpertPlan {
    pub fn new(path: Polyline, start_s: f64, cruise: f64, duration: f64) -> Self {
        Self {
            path,
            start_s,
            start_speed: cruise,
            cruise,
            duration,
            holds: vec![],
            brake: None,
            ignore: vec![],
        }
    }
}

/// Speed cap at each metre of `path` from its curvature, lowered ahead of
/// tight sections so the expert can slow down in time.
fn curve_caps(path: &Polyline, cruise: f64) -> Vec<f64> {
    let n = path.length().floor() as usize + 1;
    let mut caps: Vec<f64> = (0..=n)
        .map(|i| {
            let s = i as f64;
            let a = path.heading_at((s - 2.0).max(0.0));
            let b = path.heading_at((s + 2.0).min(path.length()));
            let ds = (s + 2.0).min(path.length()) - (s - 2.0).max(0.0);
            let kappa = planbench_core::geometry::angle_diff(b, a).abs() / ds.max(1e-6);
            if kappa < 1e-6 {
                cruise
            } else {
                (CURVE_LAT_ACCEL / kappa).sqrt().min(cruise)
            }
        })
        .collect();
    for i in (0..n).rev() {
        caps[i] = caps[i].min((caps[i + 1].powi(2) + 2.0 * CURVE_DECEL).sqrt());
    }
    caps
}

fn cap_at(caps: &[f64], s: f64) -> f64 {
    let i = (s.max(0.0).floor() as usize).min(caps.len() - 1);
    caps[i]
}

fn record(e: &EgoState) -> EgoRecord {
    EgoRecord {
        t: e.time,
        x: e.pose.x,
        y: e.pose.y,
        heading: e.pose.heading,
        v: e.velocity,
        a: e.acceleration,
        steer: e.steering_angle,
    }
}

/// Drives the expert and returns its log on the simulation grid.
pub fn drive(
    plan: &ExpertPlan,
    agents: &[TrackedObject],
    dims: VehicleDims,
    limits: &ModelLimits,
    gains: &ControllerGains,
    idm: &IdmParams,
) -> Vec<EgoRecord> {
    let path = &plan.path;
    let caps = curve_caps(path, plan.cruise);
    let pose = path.pose_at(plan.start_s);
    let mut ego = EgoState {
        time: 0.0,
        pose,
        velocity: plan.start_speed,
        acceleration: 0.0,
        steering_angle: 0.0,
        dims,
    };
    let front = dims.rear_axle_to_center + dims.length / 2.0;
    let n = (plan.duration / GRID_DT).round() as usize;
    let mut released = vec![false; plan.holds.len()];
    let mut stopped_for = 0.0;
    let mut out = Vec::with_capacity(n + 1);
    let arc = cumulative(path);
    for k in 0..=n {
        let t = k as f64 * GRID_DT;
        ego.time = t;
        let proj = path.project(ego.pose.position());
        let s_front = proj.arc_length + front;

        // Longitudinal command: IDM toward the nearest obstacle ahead.
        let params = IdmParams {
            desired_speed: cap_at(&caps, proj.arc_length).max(0.5),
            ..*idm
        };
        let mut obstacles: Vec<(f64, f64)> = Vec::new();
        for a in agents.iter().filter(|a| !plan.ignore.contains(&a.id)) {
            let Ok(snap) = replay_snapshot(a, t) else { continue };
            let q = path.project(snap.pose.position());
            let along = path.pose_at(q.arc_length).direction();
            let aligned = snap.velocity.norm() < 0.5 || snap.velocity.dot(along) > 0.5 * snap.velocity.norm();
            let lateral = q.lateral_offset.abs();
            if aligned && lateral < 0.5 * (dims.width + a.width) + LEAD_LATERAL_MARGIN && q.arc_length > proj.arc_length {
                obstacles.push((q.arc_length - a.length / 2.0 - s_front, snap.velocity.dot(along).max(0.0)));
            }
        }
        let mut accel = match obstacles.iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
            Some(&(gap, v_lead)) => idm_accel(ego.velocity, Some(gap), v_lead, &params).unwrap_or(limits.min_accel),
            None => idm_accel(ego.velocity, None, 0.0, &params).unwrap_or(limits.min_accel),
        };
        for (h, done) in plan.holds.iter().zip(released.iter_mut()) {
            if *done {
                continue;
            }
            *done = match h.release {
                Release::At(tr) => t >= tr,
                Release::AfterStopping(d) => stopped_for >= d,
            };
            if *done {
                continue;
            }
            let gap = h.s - s_front - STOP_MARGIN;
            if gap <= 0.0 {
                accel = limits.min_accel;
            } else {
                let needed = ego.velocity.powi(2) / (2.0 * gap);
                if needed > STOP_DECEL {
                    accel = accel.min(-needed);
                }
            }
        }
        // The end of the path acts as a permanent stop point.
        let end_gap = path.length() - s_front - STOP_MARGIN;
        if end_gap <= 0.0 {
            accel = limits.min_accel;
        } else if ego.velocity.powi(2) / (2.0 * end_gap) > STOP_DECEL {
            accel = accel.min(-ego.velocity.powi(2) / (2.0 * end_gap));
        }
        if let Some(b) = plan.brake {
            if t >= b.start && t < b.end {
                accel = -b.decel;
            }
        }

        // Lateral command: pure pursuit on the path ahead.
        let ahead: Vec<Point2> = std::iter::once(path.pose_at(proj.arc_length).position())
            .chain(
                path.points()
                    .iter()
                    .zip(&arc)
                    .filter(|(_, s)| **s > proj.arc_length && **s < proj.arc_length + PATH_WINDOW)
                    .map(|(q, _)| *q),
            )
            .collect();
        let target = lookahead_point(&ahead, ego.pose.position(), lookahead_distance(ego.velocity, gains));
        let steer = control_toward(&ego, target, ego.velocity, gains, limits, GRID_DT);
        let u = clamp_control(
            ControlInput {
                acceleration: accel,
                steering_rate: steer.steering_rate,
            },
            &ego,
            limits,
            GRID_DT,
        );
        out.push(ego);
        if k == n {
            break;
        }
        ego = step(&ego, u, GRID_DT, limits).expect("grid dt is valid");
        stopped_for = if ego.velocity < 0.05 { stopped_for + GRID_DT } else { 0.0 };
    }
    out.iter().map(record).collect()
}

fn cumulative(path: &Polyline) -> Vec<f64> {
    let pts = path.points();
    let mut s = vec![0.0; pts.len()];
    for i in 1..pts.len() {
        s[i] = s[i - 1] + pts[i].dist(pts[i - 1]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64) -> Polyline {
        Polyline::new((0..=len as usize).map(|i| Point2::new(i as f64, 0.0)).collect()).unwrap()
    }

    fn run(plan: &ExpertPlan, agents: &[TrackedObject]) -> Vec<EgoRecord> {
        drive(
            plan,
            agents,
            VehicleDims::default(),
            &ModelLimits::default(),
            &ControllerGains::default(),
            &IdmParams::default(),
        )
    }

    #[test]
    fn profile_interpolates_and_holds() {
        let p = Profile(vec![(1.0, 2.0), (3.0, 6.0)]);
        assert_eq!(p.at(0.0), 2.0);
        assert_eq!(p.at(2.0), 4.0);
        assert_eq!(p.at(9.0), 6.0);
        assert_eq!(p.shifted(-5.0).at(0.0), 0.0);
    }

    #[test]
    fn scripted_track_covers_speed_times_time() {
        let tr = scripted_track("a", AgentCategory::Vehicle, 4.0, 2.0, &straight(200.0), 10.0, &Profile::constant(5.0), 10.0);
        assert_eq!(tr.states.len(), 101);
        let last = tr.states.last().unwrap();
        assert!((last.x - 60.0).abs() < 1e-9);
        assert!((last.vx - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_track_stops_at_the_path_end() {
        let tr = scripted_track("a", AgentCategory::Vehicle, 4.0, 2.0, &straight(30.0), 0.0, &Profile::constant(10.0), 10.0);
        let last = tr.states.last().unwrap();
        assert_eq!((last.x, last.vx), (30.0, 0.0));
    }

    #[test]
    fn expert_cruises_on_a_free_road() {
        let log = run(&ExpertPlan::new(straight(300.0), 10.0, 10.0, 10.0), &[]);
        assert_eq!(log.len(), 101);
        assert!((log[100].x - 110.0).abs() < 0.5, "{}", log[100].x);
        assert!(log.iter().all(|r| r.y.abs() < 1e-9));
    }

    #[test]
    fn expert_stops_short_of_a_hold_and_leaves_after_release() {
        let mut plan = ExpertPlan::new(straight(300.0), 10.0, 10.0, 20.0);
        plan.holds.push(Hold {
            s: 60.0,
            release: Release::At(12.0),
        });
        let log = run(&plan, &[]);
        let front = VehicleDims::default().rear_axle_to_center + VehicleDims::default().length / 2.0;
        let before: Vec<&EgoRecord> = log.iter().filter(|r| r.t < 12.0).collect();
        let max_front = before.iter().map(|r| r.x + front).fold(f64::MIN, f64::max);
        assert!(max_front < 60.0 && max_front > 55.0, "front reached {max_front}");
        assert!(before.last().unwrap().v < 0.05);
        assert!(log.last().unwrap().v > 3.0);
    }

    #[test]
    fn expert_follows_a_slower_lead_without_contact() {
        let path = straight(400.0);
        let lead = scripted_track("lead", AgentCategory::Vehicle, 4.6, 1.9, &path, 50.0, &Profile::constant(5.0), 20.0);
        let log = run(&ExpertPlan::new(path, 10.0, 12.0, 20.0), &[to_tracked(&lead)]);
        let front = 3.7;
        for (r, l) in log.iter().zip(&lead.states) {
            assert!(l.x - 2.3 - (r.x + front) > 1.0, "gap closed at t={}", r.t);
        }
        assert!((log.last().unwrap().v - 5.0).abs() < 0.5);
    }
}
