//! Kinematic bicycle model about the rear axle with bounded controls.

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;
use crate::geometry::{normalize_angle, EgoState, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub acceleration: f64,
    pub steering_rate: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        acceleration: 0.0,
        steering_rate: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLimits {
    pub max_speed: f64,
    pub min_accel: f64,
    pub max_accel: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
}

impl Default for ModelLimits {
    fn default() -> Self {
        Self {
            max_speed: 15.0,
            min_accel: -4.0,
            max_accel: 2.5,
            max_steer: 0.6,
            max_steer_rate: 0.5,
        }
    }
}

impl ModelLimits {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.min_accel < 0.0 && self.max_accel > 0.0) {
            return Err(ValidationError::new("acceleration limits must bracket zero"));
        }
        if !(self.max_steer > 0.0 && self.max_steer_rate > 0.0 && self.max_speed > 0.0) {
            return Err(ValidationError::new("steering and speed limits must be positive"));
        }
        Ok(())
    }
}

pub const MAX_STEP_DT: f64 = 0.2;

/// Clips controls to the limits and so that one step of length `dt` keeps
/// speed in `[0, max_speed]` and steering within `±max_steer`.
pub fn clamp_control(u: ControlInput, state: &EgoState, limits: &ModelLimits, dt: f64) -> ControlInput {
    let finite_or_zero = |v: f64| if v.is_finite() { v } else { 0.0 };
    let v = state.velocity;
    let mut a = finite_or_zero(u.acceleration).clamp(limits.min_accel, limits.max_accel);
    a = a.clamp((0.0 - v) / dt, (limits.max_speed - v) / dt);
    let delta = state.steering_angle;
    let mut rate = finite_or_zero(u.steering_rate).clamp(-limits.max_steer_rate, limits.max_steer_rate);
    rate = rate.clamp((-limits.max_steer - delta) / dt, (limits.max_steer - delta) / dt);
    ControlInput {
        acceleration: a,
        steering_rate: rate,
    }
}

#[derive(Clone, Copy)]
struct Deriv {
    x: f64,
    y: f64,
    heading: f64,
    v: f64,
    delta: f64,
}

fn rates(heading: f64, v: f64, delta: f64, u: &ControlInput, wheelbase: f64) -> Deriv {
    Deriv {
        x: v * heading.cos(),
        y: v * heading.sin(),
        heading: v * delta.tan() / wheelbase,
        v: u.acceleration,
        delta: u.steering_rate,
    }
}

/// Advances the state by `dt` with the explicit midpoint rule.
pub fn step(state: &EgoState, u: ControlInput, dt: f64, limits: &ModelLimits) -> Result<EgoState, ValidationError> {
    if !(dt > 0.0 && dt <= MAX_STEP_DT) {
        return Err(ValidationError::new(format!("step dt {dt} outside (0, {MAX_STEP_DT}]")));
    }
    let wb = state.dims.wheelbase;
    let p = &state.pose;
    let k1 = rates(p.heading, state.velocity, state.steering_angle, &u, wb);
    let h = 0.5 * dt;
    let k2 = rates(
        p.heading + h * k1.heading,
        state.velocity + h * k1.v,
        state.steering_angle + h * k1.delta,
        &u,
        wb,
    );
    let velocity = (state.velocity + dt * k2.v).clamp(0.0, limits.max_speed);
    let steering_angle = (state.steering_angle + dt * k2.delta).clamp(-limits.max_steer, limits.max_steer);
    Ok(EgoState {
        time: state.time + dt,
        pose: Pose2D {
            x: p.x + dt * k2.x,
            y: p.y + dt * k2.y,
            heading: normalize_angle(p.heading + dt * k2.heading),
        },
        velocity,
        acceleration: u.acceleration,
        steering_angle,
        dims: state.dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VehicleDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(v: f64, delta: f64) -> EgoState {
        EgoState {
            time: 0.0,
            pose: Pose2D::new(0.0, 0.0, 0.0),
            velocity: v,
            acceleration: 0.0,
            steering_angle: delta,
            dims: VehicleDims {
                length: 4.6,
                width: 1.9,
                wheelbase: 3.0,
                rear_axle_to_center: 1.4,
            },
        }
    }

    #[test]
    fn clamp_examples() {
        let lim = ModelLimits::default();
        let u = clamp_control(
            ControlInput {
                acceleration: 5.0,
                steering_rate: 0.0,
            },
            &state(5.0, 0.0),
            &lim,
            0.1,
        );
        assert_eq!(u.acceleration, 2.5);
        let sat = clamp_control(
            ControlInput {
                acceleration: 0.0,
                steering_rate: 0.5,
            },
            &state(5.0, 0.6),
            &lim,
            0.1,
        );
        assert_eq!(sat.steering_rate, 0.0);
        let rev = clamp_control(
            ControlInput {
                acceleration: -1.0,
                steering_rate: 0.0,
            },
            &state(0.0, 0.0),
            &lim,
            0.1,
        );
        assert_eq!(rev.acceleration, 0.0);
    }

    #[test]
    fn straight_motion() {
        let s = step(&state(10.0, 0.0), ControlInput::ZERO, 0.1, &ModelLimits::default()).unwrap();
        assert!((s.pose.x - 1.0).abs() < 1e-12);
        assert_eq!(s.pose.y, 0.0);
        assert_eq!(s.pose.heading, 0.0);
        assert_eq!(s.velocity, 10.0);
        assert!((s.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rest_state_is_fixed() {
        let s0 = state(0.0, 0.3);
        let s = step(&s0, ControlInput::ZERO, 0.1, &ModelLimits::default()).unwrap();
        assert_eq!(s.pose, s0.pose);
    }

    #[test]
    fn rejects_bad_dt() {
        let lim = ModelLimits::default();
        assert!(step(&state(1.0, 0.0), ControlInput::ZERO, 0.0, &lim).is_err());
        assert!(step(&state(1.0, 0.0), ControlInput::ZERO, 0.25, &lim).is_err());
    }

    #[test]
    fn full_circle_returns_heading() {
        // R = wheelbase / tan(delta) = 20 m.
        let delta = (3.0_f64 / 20.0).atan();
        let mut s = state(10.0, delta);
        let steps = 1000;
        let dt = 2.0 * std::f64::consts::PI * 20.0 / 10.0 / steps as f64;
        for _ in 0..steps {
            s = step(&s, ControlInput::ZERO, dt, &ModelLimits::default()).unwrap();
        }
        let heading_err = normalize_angle(s.pose.heading).abs();
        assert!(heading_err < 1e-3, "heading error {heading_err}");
        assert!(s.pose.position().norm() < 0.05);
    }

    fn rollout(controls: &[ControlInput], dt_control: f64, substeps: usize) -> EgoState {
        let lim = ModelLimits {
            max_speed: 100.0,
            max_steer: 1.0,
            max_steer_rate: 10.0,
            min_accel: -100.0,
            max_accel: 100.0,
        };
        let mut s = state(8.0, 0.0);
        let dt = dt_control / substeps as f64;
        for u in controls {
            for _ in 0..substeps {
                s = step(&s, *u, dt, &lim).unwrap();
            }
        }
        s
    }

    #[test]
    fn midpoint_rule_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let controls: Vec<_> = (0..20)
            .map(|_| ControlInput {
                acceleration: rng.gen_range(-1.0..1.0),
                steering_rate: rng.gen_range(-0.3..0.3),
            })
            .collect();
        let reference = rollout(&controls, 0.2, 2000);
        let err = |n| {
            let s = rollout(&controls, 0.2, n);
            s.pose.distance(&reference.pose)
        };
        let (e1, e2, e3) = (err(1), err(2), err(4));
        let r1 = e1 / e2;
        let r2 = e2 / e3;
        assert!((3.0..5.0).contains(&r1), "ratio {r1}");
        assert!((3.0..5.0).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn fuzzed_steps_respect_limits() {
        let lim = ModelLimits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = state(3.0, 0.0);
        for _ in 0..100_000 {
            let u = ControlInput {
                acceleration: rng.gen_range(-10.0..10.0),
                steering_rate: rng.gen_range(-3.0..3.0),
            };
            let u = clamp_control(u, &s, &lim, 0.1);
            s = step(&s, u, 0.1, &lim).unwrap();
            assert!(s.velocity >= 0.0 && s.velocity <= lim.max_speed);
            assert!(s.steering_angle.abs() <= lim.max_steer);
            assert!(s.pose.heading > -std::f64::consts::PI && s.pose.heading <= std::f64::consts::PI);
        }
    }

    #[test]
    fn deterministic() {
        let u = ControlInput {
            acceleration: 0.7,
            steering_rate: 0.1,
        };
        let a = step(&state(4.0, 0.1), u, 0.1, &ModelLimits::default()).unwrap();
        let b = step(&state(4.0, 0.1), u, 0.1, &ModelLimits::default()).unwrap();
        assert_eq!(a.pose.x.to_bits(), b.pose.x.to_bits());
        assert_eq!(a.pose.heading.to_bits(), b.pose.heading.to_bits());
    }
}
