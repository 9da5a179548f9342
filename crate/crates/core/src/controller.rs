//! Trajectory-tracking controller: pure pursuit for steering and a
//! proportional speed loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EgoState, Point2, Trajectory};
use crate::vehicle::{clamp_control, ControlInput, ModelLimits};

/// Plan span the controller needs ahead of the current time.
pub const REQUIRED_PLAN_SPAN: f64 = 1.0;
const SPAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub lookahead_base: f64,
    pub lookahead_speed_gain: f64,
    pub speed_kp: f64,
    pub steer_kp: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            lookahead_base: 2.0,
            lookahead_speed_gain: 1.0,
            speed_kp: 1.2,
            steer_kp: 4.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("plan covers [{plan_start:.3}, {plan_end:.3}] but the controller needs [{needed_start:.3}, {needed_end:.3}]")]
pub struct PlanHorizonError {
    pub plan_start: f64,
    pub plan_end: f64,
    pub needed_start: f64,
    pub needed_end: f64,
}

pub fn lookahead_distance(speed: f64, gains: &ControllerGains) -> f64 {
    gains.lookahead_base + gains.lookahead_speed_gain * speed.max(0.0)
}

/// First point along `path` at Euclidean distance `lookahead` from `origin`,
/// searched forward from the path point closest to `origin`. Falls back to
/// the path end when the whole remainder is closer.
pub fn lookahead_point(path: &[Point2], origin: Point2, lookahead: f64) -> Point2 {
    let mut start = 0;
    let mut best = f64::INFINITY;
    for i in 0..path.len().saturating_sub(1) {
        let (d, _) = crate::geometry::point_segment_projection(origin, path[i], path[i + 1]);
        if d < best {
            best = d;
            start = i;
        }
    }
    for i in start..path.len().saturating_sub(1) {
        let (a, b) = (path[i], path[i + 1]);
        if b.dist(origin) < lookahead {
            continue;
        }
        // Solve |a + t (b - a) - origin| = lookahead for the largest t in [0, 1].
        let d = b.sub(a);
        let f = a.sub(origin);
        let qa = d.dot(d);
        let qb = 2.0 * f.dot(d);
        let qc = f.dot(f) - lookahead * lookahead;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let t = ((-qb + disc.sqrt()) / (2.0 * qa)).clamp(0.0, 1.0);
        return a.lerp(b, t);
    }
    *path.last().expect("non-empty path")
}

/// Pure-pursuit steering target for a rear-axle reference point. The chord
/// to the target is the pursuit arc's chord, so this equals the textbook law
/// with the lookahead distance whenever the target lies on the lookahead
/// circle, and stays geometrically exact when it does not (plan start or end).
pub fn pure_pursuit_steer(ego: &EgoState, target: Point2) -> f64 {
    let local = ego.pose.to_local(target);
    let dist = local.norm();
    if dist < 1e-9 {
        return 0.0;
    }
    let sin_alpha = local.y / dist;
    (2.0 * ego.dims.wheelbase * sin_alpha / dist).atan()
}

/// Control that steers toward `target` and drives toward `target_speed`.
pub fn control_toward(
    ego: &EgoState,
    target: Point2,
    target_speed: f64,
    gains: &ControllerGains,
    limits: &ModelLimits,
    dt: f64,
) -> ControlInput {
    let desired = pure_pursuit_steer(ego, target).clamp(-limits.max_steer, limits.max_steer);
    let u = ControlInput {
        acceleration: gains.speed_kp * (target_speed - ego.velocity),
        steering_rate: gains.steer_kp * (desired - ego.steering_angle),
    };
    clamp_control(u, ego, limits, dt)
}

/// Tracks `plan` from the current ego state.
///
/// The target speed is read off the plan at the time the ego would need to
/// reach the lookahead point, capped at [`REQUIRED_PLAN_SPAN`].
pub fn track(
    ego: &EgoState,
    plan: &Trajectory,
    gains: &ControllerGains,
    limits: &ModelLimits,
    dt: f64,
) -> Result<ControlInput, PlanHorizonError> {
    let needed_end = ego.time + REQUIRED_PLAN_SPAN;
    if plan.start_time() > ego.time + SPAN_TOLERANCE || plan.end_time() < needed_end - SPAN_TOLERANCE {
        return Err(PlanHorizonError {
            plan_start: plan.start_time(),
            plan_end: plan.end_time(),
            needed_start: ego.time,
            needed_end,
        });
    }
    let lookahead = lookahead_distance(ego.velocity, gains);
    // Only the part of the plan from the current time on is a valid target.
    let path: Vec<Point2> = std::iter::once(plan.pose_at(ego.time).position())
        .chain(
            plan.samples()
                .iter()
                .filter(|s| s.time > ego.time)
                .map(|s| s.pose.position()),
        )
        .collect();
    let target = lookahead_point(&path, ego.pose.position(), lookahead);
    let lookahead_time = (lookahead / ego.velocity.max(1e-3)).min(REQUIRED_PLAN_SPAN);
    let target_speed = plan.speed_at(ego.time + lookahead_time);
    Ok(control_toward(ego, target, target_speed, gains, limits, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose2D, TrajectorySample, VehicleDims};
    use crate::vehicle::step;

    fn ego(x: f64, y: f64, heading: f64, v: f64) -> EgoState {
        EgoState {
            time: 0.0,
            pose: Pose2D::new(x, y, heading),
            velocity: v,
            acceleration: 0.0,
            steering_angle: 0.0,
            dims: VehicleDims::default(),
        }
    }

    fn straight_plan(t0: f64, v: f64, secs: f64) -> Trajectory {
        let n = (secs / 0.1).round() as usize;
        Trajectory::new(
            (0..=n)
                .map(|i| {
                    let t = t0 + i as f64 * 0.1;
                    TrajectorySample {
                        time: t,
                        pose: Pose2D::new(v * t, 0.0, 0.0),
                        velocity: Some(v),
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_on_straight_plan() {
        let plan = straight_plan(0.0, 10.0, 8.0);
        let u = track(&ego(0.0, 0.0, 0.0, 10.0), &plan, &ControllerGains::default(), &ModelLimits::default(), 0.1)
            .unwrap();
        assert!(u.acceleration.abs() < 1e-9);
        assert!(u.steering_rate.abs() < 1e-9);
    }

    #[test]
    fn steers_right_when_left_of_plan() {
        let plan = straight_plan(0.0, 10.0, 8.0);
        let e = ego(0.0, 1.0, 0.0, 10.0);
        let path: Vec<_> = plan.positions();
        let target = lookahead_point(&path, e.pose.position(), lookahead_distance(10.0, &ControllerGains::default()));
        assert!(pure_pursuit_steer(&e, target) < 0.0);
        let u = track(&e, &plan, &ControllerGains::default(), &ModelLimits::default(), 0.1).unwrap();
        assert!(u.steering_rate < 0.0);
    }

    #[test]
    fn short_plan_is_rejected() {
        let plan = straight_plan(0.0, 10.0, 0.5);
        let res = track(&ego(0.0, 0.0, 0.0, 10.0), &plan, &ControllerGains::default(), &ModelLimits::default(), 0.1);
        assert!(res.is_err());
    }

    fn run_straight(y0: f64, h0: f64, v: f64) -> Vec<f64> {
        let plan = straight_plan(0.0, v, 30.0);
        let gains = ControllerGains::default();
        let limits = ModelLimits::default();
        let mut s = ego(0.0, y0, h0, v);
        let mut errs = vec![s.pose.y.abs()];
        while s.time < 12.0 {
            let u = track(&s, &plan, &gains, &limits, 0.1).unwrap();
            s = step(&s, u, 0.1, &limits).unwrap();
            errs.push(s.pose.y.abs());
        }
        errs
    }

    /// Local maxima of a series.
    fn peaks(errs: &[f64]) -> Vec<f64> {
        errs.windows(3)
            .filter(|w| w[1] >= w[0] && w[1] > w[2])
            .map(|w| w[1])
            .collect()
    }

    #[test]
    fn straight_plan_converges_from_offsets() {
        let starts = [(2.0, 0.0), (-2.0, 0.3), (1.0, -0.3), (-0.5, 0.2), (2.0, 0.3), (-2.0, -0.3), (0.0, 0.3)];
        for (&(y0, h0), &v) in starts.iter().flat_map(|s| [3.0, 5.0, 8.0, 12.0, 15.0].iter().map(move |v| (s, v))) {
            let errs = run_straight(y0, h0, v);
            // Pure pursuit is underdamped, so the error may cross the plan;
            // the envelope of its peaks still shrinks from 1 s on.
            let p = peaks(&errs[10..]);
            for w in p.windows(2) {
                assert!(w[1] < w[0], "growing peak from ({y0}, {h0}) at {v} m/s: {p:?}");
            }
            assert!(errs[100] < 0.05, "error {} after 10 s from ({y0}, {h0}) at {v} m/s", errs[100]);
        }
    }

    #[test]
    fn circular_plan_steady_state() {
        let (r, v) = (20.0, 8.0);
        let w = v / r;
        let plan = Trajectory::new(
            (0..=300)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    let th = w * t;
                    TrajectorySample {
                        time: t,
                        pose: Pose2D::new(r * th.sin(), r * (1.0 - th.cos()), th),
                        velocity: Some(v),
                    }
                })
                .collect(),
        )
        .unwrap();
        let gains = ControllerGains::default();
        let limits = ModelLimits::default();
        let mut s = ego(0.0, 0.0, 0.0, v);
        let mut worst: f64 = 0.0;
        while s.time < 20.0 {
            let u = track(&s, &plan, &gains, &limits, 0.1).unwrap();
            s = step(&s, u, 0.1, &limits).unwrap();
            let radial = (s.pose.x.powi(2) + (s.pose.y - r).powi(2)).sqrt();
            if s.time > 3.0 {
                worst = worst.max((radial - r).abs());
            }
        }
        assert!(worst < 0.15, "steady-state lateral error {worst}");
    }
}
