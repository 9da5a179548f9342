//! Shared geometric and kinematic types.
//!
//! Ego poses refer to the rear-axle center; the footprint center sits
//! `rear_axle_to_center` ahead of it along the heading. Agent poses refer to
//! the box center.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Signed shortest-arc difference `to - from`, in `(-π, π]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

/// Linear blend written so that `t == 0` and `t == 1` reproduce the endpoints exactly.
#[inline]
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// Interpolates headings along the shortest arc.
pub fn lerp_angle(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return normalize_angle(a);
    }
    if t == 1.0 {
        return normalize_angle(b);
    }
    normalize_angle(a + angle_diff(b, a) * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(lerp(self.x, other.x, t), lerp(self.y, other.y, t))
    }
}

/// Planar pose. The heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn direction(&self) -> Point2 {
        Point2::new(self.heading.cos(), self.heading.sin())
    }

    /// Point `forward` m ahead and `left` m to the left of this pose.
    pub fn offset(&self, forward: f64, left: f64) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(self.x + forward * c - left * s, self.y + forward * s + left * c)
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, p: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        let d = p.sub(self.position());
        Point2::new(d.x * c + d.y * s, -d.x * s + d.y * c)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        self.position().dist(other.position())
    }

    pub fn interpolate(&self, other: &Pose2D, t: f64) -> Pose2D {
        Pose2D {
            x: lerp(self.x, other.x, t),
            y: lerp(self.y, other.y, t),
            heading: lerp_angle(self.heading, other.heading, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub rear_axle_to_center: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self {
            length: 4.6,
            width: 1.9,
            wheelbase: 2.8,
            rear_axle_to_center: 1.4,
        }
    }
}

impl VehicleDims {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let all = [self.length, self.width, self.wheelbase, self.rear_axle_to_center];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ValidationError::new("vehicle dimensions must be positive"));
        }
        if self.wheelbase >= self.length {
            return Err(ValidationError::new("wheelbase must be shorter than the vehicle"));
        }
        Ok(())
    }

    /// Footprint of a vehicle whose rear axle sits at `pose`.
    pub fn footprint(&self, pose: &Pose2D) -> OrientedBox {
        let c = pose.offset(self.rear_axle_to_center, 0.0);
        OrientedBox::new(
            Pose2D {
                x: c.x,
                y: c.y,
                heading: pose.heading,
            },
            self.length / 2.0,
            self.width / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub time: f64,
    /// Rear-axle pose.
    pub pose: Pose2D,
    /// Signed speed along the heading.
    pub velocity: f64,
    pub acceleration: f64,
    pub steering_angle: f64,
    pub dims: VehicleDims,
}

impl EgoState {
    pub fn footprint(&self) -> OrientedBox {
        self.dims.footprint(&self.pose)
    }

    pub fn center(&self) -> Point2 {
        self.pose.offset(self.dims.rear_axle_to_center, 0.0)
    }

    pub fn velocity_vector(&self) -> Point2 {
        self.pose.direction().scale(self.velocity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentCategory {
    pub fn is_vru(self) -> bool {
        !matches!(self, AgentCategory::Vehicle)
    }
}

/// One timestamped observation of an agent's box center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub time: f64,
    pub pose: Pose2D,
    pub velocity: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: String,
    pub category: AgentCategory,
    pub states: Vec<AgentState>,
    pub length: f64,
    pub width: f64,
}

impl TrackedObject {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.states.is_empty() {
            return Err(ValidationError::new(format!("track {} has no states", self.id)));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(ValidationError::new(format!("track {} has invalid dims", self.id)));
        }
        if self.states.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(ValidationError::new(format!("track {} is not time-sorted", self.id)));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.states[self.states.len() - 1].time
    }
}

/// A world-frame snapshot of any object: the ego or an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSnapshot {
    pub id: String,
    pub category: AgentCategory,
    pub pose: Pose2D,
    pub velocity: Point2,
    pub length: f64,
    pub width: f64,
}

impl ObjectSnapshot {
    pub fn footprint(&self) -> OrientedBox {
        OrientedBox::new(self.pose, self.length / 2.0, self.width / 2.0)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub pose: Pose2D,
    pub velocity: Option<f64>,
}

/// Time-stamped pose sequence with at least two samples and strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, ValidationError> {
        if samples.len() < 2 {
            return Err(ValidationError::new("trajectory needs at least two samples"));
        }
        for s in &samples {
            let finite = s.time.is_finite()
                && s.pose.x.is_finite()
                && s.pose.y.is_finite()
                && s.pose.heading.is_finite()
                && s.velocity.is_none_or(f64::is_finite);
            if !finite {
                return Err(ValidationError::new("trajectory contains non-finite values"));
            }
        }
        if samples.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(ValidationError::new("trajectory times must be strictly increasing"));
        }
        let samples = samples
            .into_iter()
            .map(|s| TrajectorySample {
                pose: Pose2D::new(s.pose.x, s.pose.y, s.pose.heading),
                ..s
            })
            .collect();
        Ok(Self { samples })
    }

    pub fn from_poses(times: &[f64], poses: &[Pose2D]) -> Result<Self, ValidationError> {
        if times.len() != poses.len() {
            return Err(ValidationError::new("times and poses differ in length"));
        }
        Self::new(
            times
                .iter()
                .zip(poses)
                .map(|(&time, &pose)| TrajectorySample {
                    time,
                    pose,
                    velocity: None,
                })
                .collect(),
        )
    }

    pub fn from_ego_states(states: &[EgoState]) -> Result<Self, ValidationError> {
        Self::new(
            states
                .iter()
                .map(|s| TrajectorySample {
                    time: s.time,
                    pose: s.pose,
                    velocity: Some(s.velocity),
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    /// Index `i` such that `samples[i].time <= t < samples[i+1].time`, clamped.
    fn bracket(&self, t: f64) -> usize {
        let idx = self.samples.partition_point(|s| s.time <= t);
        idx.saturating_sub(1).min(self.samples.len() - 2)
    }

    /// Pose at time `t`, clamped to the trajectory span.
    pub fn pose_at(&self, t: f64) -> Pose2D {
        if t <= self.start_time() {
            return self.samples[0].pose;
        }
        if t >= self.end_time() {
            return self.samples[self.samples.len() - 1].pose;
        }
        let i = self.bracket(t);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let f = (t - a.time) / (b.time - a.time);
        a.pose.interpolate(&b.pose, f)
    }

    /// Speed at `t`: the sample velocities when present, otherwise the
    /// chord speed of the bracketing segment.
    pub fn speed_at(&self, t: f64) -> f64 {
        let t = t.clamp(self.start_time(), self.end_time());
        let i = self.bracket(t);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let f = (t - a.time) / (b.time - a.time);
        match (a.velocity, b.velocity) {
            (Some(va), Some(vb)) => lerp(va, vb, f),
            _ => a.pose.distance(&b.pose) / (b.time - a.time),
        }
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.samples.iter().map(|s| s.pose.position()).collect()
    }

    /// True when consecutive spacings agree with the first spacing to 1e-6 relative.
    pub fn uniform_dt(&self) -> Option<f64> {
        let dt = self.samples[1].time - self.samples[0].time;
        let tol = 1e-6 * dt.max(1e-9);
        self.samples
            .windows(2)
            .all(|w| ((w[1].time - w[0].time) - dt).abs() <= tol)
            .then_some(dt)
    }
}

/// Resamples onto `t0, t0 + dt, ...` up to the last time not exceeding the end.
pub fn resample_trajectory(traj: &Trajectory, dt: f64) -> Result<Trajectory, ValidationError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ValidationError::new("resample dt must be positive"));
    }
    let t0 = traj.start_time();
    let span = traj.end_time() - t0;
    // Tolerate grid points that land a hair past the end through rounding.
    let n = ((span / dt) + 1e-9).floor() as usize;
    let has_velocity = traj.samples.iter().all(|s| s.velocity.is_some());
    let samples = (0..=n)
        .map(|k| {
            let t = t0 + k as f64 * dt;
            let t_eval = t.min(traj.end_time());
            TrajectorySample {
                time: t,
                pose: traj.pose_at(t_eval),
                velocity: has_velocity.then(|| traj.speed_at(t_eval)),
            }
        })
        .collect();
    Trajectory::new(samples)
}

/// Finite-difference derivatives of a uniformly sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicProfile {
    pub dt: f64,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
    /// Centripetal acceleration `speed * yaw_rate`.
    pub lateral_accel: Vec<f64>,
}

/// First derivative with central differences inside and second-order
/// one-sided stencils at both ends. Needs at least three samples.
pub fn derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    debug_assert!(n >= 3);
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt);
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dt);
    }
    out
}

/// Removes 2π jumps so the heading series is continuous.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut prev = match angles.first() {
        Some(&a) => a,
        None => return out,
    };
    out.push(prev);
    for &a in &angles[1..] {
        let next = prev + angle_diff(a, prev);
        out.push(next);
        prev = next;
    }
    out
}

pub fn differentiate(traj: &Trajectory) -> Result<KinematicProfile, ValidationError> {
    if traj.len() < 4 {
        return Err(ValidationError::new("differentiation needs at least four samples"));
    }
    let dt = traj
        .uniform_dt()
        .ok_or_else(|| ValidationError::new("differentiation needs uniform sampling"))?;
    let xs: Vec<f64> = traj.samples.iter().map(|s| s.pose.x).collect();
    let ys: Vec<f64> = traj.samples.iter().map(|s| s.pose.y).collect();
    let headings: Vec<f64> = traj.samples.iter().map(|s| s.pose.heading).collect();
    let vx = derivative(&xs, dt);
    let vy = derivative(&ys, dt);
    let speed: Vec<f64> = vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).collect();
    let accel = derivative(&speed, dt);
    let jerk = derivative(&accel, dt);
    let yaw_rate = derivative(&unwrap_angles(&headings), dt);
    let yaw_accel = derivative(&yaw_rate, dt);
    let lateral_accel = speed.iter().zip(&yaw_rate).map(|(v, w)| v * w).collect();
    Ok(KinematicProfile {
        dt,
        speed,
        accel,
        jerk,
        yaw_rate,
        yaw_accel,
        lateral_accel,
    })
}

/// Rectangle given by its center pose and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            half_length,
            half_width,
        }
    }

    pub fn axes(&self) -> [Point2; 2] {
        let (s, c) = self.center.heading.sin_cos();
        [Point2::new(c, s), Point2::new(-s, c)]
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [Point2; 4] {
        let (hl, hw) = (self.half_length, self.half_width);
        [
            self.center.offset(hl, hw),
            self.center.offset(-hl, hw),
            self.center.offset(-hl, -hw),
            self.center.offset(hl, -hw),
        ]
    }

    /// Projection radius of the box onto a unit axis.
    pub fn radius_on(&self, axis: Point2) -> f64 {
        let [u, v] = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }

    pub fn contains(&self, p: Point2) -> bool {
        let local = self.center.to_local(p);
        local.x.abs() <= self.half_length && local.y.abs() <= self.half_width
    }

    pub fn translated(&self, d: Point2) -> OrientedBox {
        OrientedBox {
            center: Pose2D {
                x: self.center.x + d.x,
                y: self.center.y + d.y,
                heading: self.center.heading,
            },
            ..*self
        }
    }

    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        box_overlap(self, other)
    }

    /// Minimum distance between the two closed rectangles; zero when they overlap.
    pub fn distance_to(&self, other: &OrientedBox) -> f64 {
        if box_overlap(self, other) {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (p0, p1) = (a[i], a[(i + 1) % 4]);
            for j in 0..4 {
                let (q0, q1) = (b[j], b[(j + 1) % 4]);
                best = best.min(segment_distance(p0, p1, q0, q1));
            }
        }
        best
    }
}

/// Separating-axis test over the four edge normals of the two boxes.
/// Touching boxes count as overlapping.
pub fn box_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = b.center.position().sub(a.center.position());
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    [a0, a1, b0, b1]
        .iter()
        .all(|&axis| d.dot(axis).abs() <= a.radius_on(axis) + b.radius_on(axis))
}

/// Distance from `p` to segment `[a, b]` together with the clamped parameter.
pub fn point_segment_projection(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (p.dist(a), 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    (p.dist(a.lerp(b, t)), t)
}

pub fn segments_intersect(p0: Point2, p1: Point2, q0: Point2, q1: Point2) -> bool {
    let d1 = p1.sub(p0).cross(q0.sub(p0));
    let d2 = p1.sub(p0).cross(q1.sub(p0));
    let d3 = q1.sub(q0).cross(p0.sub(q0));
    let d4 = q1.sub(q0).cross(p1.sub(q0));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point2, b: Point2, p: Point2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(p0, p1, q0, d1) || on(p0, p1, q1, d2) || on(q0, q1, p0, d3) || on(q0, q1, p1, d4)
}

/// Intersection point of two segments when they cross properly.
pub fn segment_intersection(p0: Point2, p1: Point2, q0: Point2, q1: Point2) -> Option<Point2> {
    let r = p1.sub(p0);
    let s = q1.sub(q0);
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = q0.sub(p0);
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| p0.lerp(p1, t))
}

pub fn segment_distance(p0: Point2, p1: Point2, q0: Point2, q1: Point2) -> f64 {
    if segments_intersect(p0, p1, q0, q1) {
        return 0.0;
    }
    point_segment_projection(p0, q0, q1)
        .0
        .min(point_segment_projection(p1, q0, q1).0)
        .min(point_segment_projection(q0, p0, p1).0)
        .min(point_segment_projection(q1, p0, p1).0)
}
