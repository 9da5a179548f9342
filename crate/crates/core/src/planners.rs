//! In-process reference planners.

use crate::agents::{idm_accel, IdmParams, ONCOMING_SPEED};
use crate::geometry::{EgoState, Pose2D, Trajectory, TrajectorySample};
use crate::sim::{Planner, PlannerError, PlannerInit, PlannerQuery};

fn sample_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

/// Replays the expert's future; past the end of the log it holds the final pose.
#[derive(Debug, Default)]
pub struct LogReplayPlanner {
    expert: Vec<EgoState>,
}

impl Planner for LogReplayPlanner {
    fn name(&self) -> String {
        "log_replay".into()
    }

    fn initialize(&mut self, init: &PlannerInit) -> Result<(), PlannerError> {
        self.expert = init.scenario.expert.clone();
        Ok(())
    }

    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        let expert = &self.expert;
        let last = expert.last().ok_or_else(|| PlannerError::Internal("planner not initialized".into()))?;
        let n = sample_count(q.horizon, q.dt);
        let t0 = expert[0].time;
        let i0 = ((q.time - t0) / q.dt).round();
        let aligned = i0 >= 0.0 && (i0 as usize) < expert.len() && (expert[i0 as usize].time - q.time).abs() < 1e-9;
        let held = |t: f64| TrajectorySample {
            time: t,
            pose: last.pose,
            velocity: Some(0.0),
        };
        if aligned {
            let i0 = i0 as usize;
            return Ok((0..=n)
                .map(|k| match expert.get(i0 + k) {
                    Some(e) => TrajectorySample {
                        time: e.time,
                        pose: e.pose,
                        velocity: Some(e.velocity),
                    },
                    None => held(last.time + (i0 + k + 1 - expert.len()) as f64 * q.dt),
                })
                .collect());
        }
        let traj = Trajectory::from_ego_states(expert).map_err(|e| PlannerError::Internal(e.message().to_string()))?;
        Ok((0..=n)
            .map(|k| {
                let t = q.time + k as f64 * q.dt;
                if t > last.time {
                    held(t)
                } else {
                    TrajectorySample {
                        time: t,
                        pose: traj.pose_at(t),
                        velocity: Some(traj.speed_at(t)),
                    }
                }
            })
            .collect())
    }
}

/// Extrapolates the current pose along the current heading at the current speed.
#[derive(Debug, Default)]
pub struct ConstantVelocityPlanner;

pub fn constant_velocity_plan(ego: &EgoState, time: f64, horizon: f64, dt: f64) -> Vec<TrajectorySample> {
    let dir = ego.pose.direction();
    (0..=sample_count(horizon, dt))
        .map(|k| {
            let tau = k as f64 * dt;
            TrajectorySample {
                time: time + tau,
                pose: Pose2D {
                    x: ego.pose.x + dir.x * ego.velocity * tau,
                    y: ego.pose.y + dir.y * ego.velocity * tau,
                    heading: ego.pose.heading,
                },
                velocity: Some(ego.velocity),
            }
        })
        .collect()
}

impl Planner for ConstantVelocityPlanner {
    fn name(&self) -> String {
        "constant_velocity".into()
    }

    fn initialize(&mut self, _init: &PlannerInit) -> Result<(), PlannerError> {
        Ok(())
    }

    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        Ok(constant_velocity_plan(&q.ego, q.time, q.horizon, q.dt))
    }
}

/// Brakes along the current heading at a constant rate, then holds.
#[derive(Debug)]
pub struct BrakeToStopPlanner {
    pub decel: f64,
}

impl Default for BrakeToStopPlanner {
    fn default() -> Self {
        Self { decel: 3.0 }
    }
}

impl Planner for BrakeToStopPlanner {
    fn name(&self) -> String {
        "brake_to_stop".into()
    }

    fn initialize(&mut self, _init: &PlannerInit) -> Result<(), PlannerError> {
        Ok(())
    }

    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        let v0 = q.ego.velocity.max(0.0);
        let t_stop = v0 / self.decel;
        let dir = q.ego.pose.direction();
        Ok((0..=sample_count(q.horizon, q.dt))
            .map(|k| {
                let tau = (k as f64 * q.dt).min(t_stop);
                let d = v0 * tau - 0.5 * self.decel * tau * tau;
                TrajectorySample {
                    time: q.time + k as f64 * q.dt,
                    pose: Pose2D {
                        x: q.ego.pose.x + dir.x * d,
                        y: q.ego.pose.y + dir.y * d,
                        heading: q.ego.pose.heading,
                    },
                    velocity: Some(v0 - self.decel * tau),
                }
            })
            .collect())
    }
}

/// Follows the route centerline at the speed IDM gives with respect to the
/// nearest object ahead in the ego's corridor. The end of the route's lane
/// graph acts as a stopped obstacle.
#[derive(Debug, Default)]
pub struct IdmRouteFollower {
    pub params: IdmParams,
}

/// Extra lateral clearance, beyond half the two widths, for an object to
/// count as blocking the corridor.
pub const CORRIDOR_MARGIN: f64 = 0.5;

impl Planner for IdmRouteFollower {
    fn name(&self) -> String {
        "idm_route_follower".into()
    }

    fn initialize(&mut self, init: &PlannerInit) -> Result<(), PlannerError> {
        self.params = init.scenario.idm();
        Ok(())
    }

    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        let path = &q.route.path;
        let ego = &q.ego;
        let own = path.project(ego.pose.position());
        let center_s = path.project(ego.center()).s;
        let dir = path.pose_at(own.s).direction();
        // (bumper gap, leader speed along the path, leader id)
        let mut lead: Option<(f64, f64, &str)> = None;
        for o in &q.agents {
            let along = o.velocity.dot(dir);
            if along < -ONCOMING_SPEED {
                continue;
            }
            let proj = path.project(o.pose.position());
            if proj.distance > (ego.dims.width + o.width) / 2.0 + CORRIDOR_MARGIN {
                continue;
            }
            let ds = proj.s - center_s;
            if ds <= 0.0 {
                continue;
            }
            let gap = ds - ego.dims.length / 2.0 - o.length / 2.0;
            let better = match lead {
                None => true,
                Some((g, _, id)) => gap < g || (gap == g && o.id.as_str() < id),
            };
            if better {
                lead = Some((gap, along.max(0.0), o.id.as_str()));
            }
        }
        let end_gap = path.end_s() - center_s - ego.dims.length / 2.0;
        let n = sample_count(q.horizon, q.dt);
        let b = self.params.comfort_decel;
        let settled = |v: f64| v * v / (2.0 * b) + 10.0;
        let speed_limit = |s: f64, v: f64| {
            let horizon_end = s + settled(v);
            path.lanes()
                .iter()
                .zip(path.offsets())
                .filter(|(l, off)| **off <= horizon_end && **off + l.length() >= s)
                .map(|(l, _)| l.speed_limit)
                .fold(f64::INFINITY, f64::min)
        };
        let (mut s, mut v) = (own.s, ego.velocity.max(0.0));
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let tau = k as f64 * q.dt;
            out.push(TrajectorySample {
                time: q.time + tau,
                pose: path.pose_at(s),
                velocity: Some(v),
            });
            let travelled = s - own.s;
            let (mut gap, mut v_lead) = (end_gap - travelled, 0.0);
            if let Some((g, vl, _)) = lead {
                let g = g + vl * tau - travelled;
                if g < gap {
                    gap = g;
                    v_lead = vl;
                }
            }
            let p = IdmParams {
                desired_speed: speed_limit(s, v).min(self.params.desired_speed),
                ..self.params
            };
            let a = idm_accel(v, Some(gap), v_lead, &p).unwrap_or(p.emergency_decel());
            v = (v + a * q.dt).max(0.0);
            s += v * q.dt;
        }
        Ok(out)
    }
}
