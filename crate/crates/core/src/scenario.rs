//! Scenario files: schema, validation, loading and saving.
//!
//! A scenario is stored as one UTF-8 JSON document with sorted keys. The
//! in-memory [`Scenario`] keeps the parsed file next to the structures
//! built from it, so saving never loses information.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::IdmParams;
use crate::controller::ControllerGains;
use crate::geometry::{AgentCategory, AgentState, EgoState, Point2, Pose2D, TrackedObject, VehicleDims};
use crate::map::{Lane, LaneId, MapError, Polygon, Polyline, Route, SemanticMap, StopLine};
use crate::tagging::ScenarioTag;
use crate::vehicle::ModelLimits;
use crate::ValidationError;

pub const SCHEMA_VERSION: u32 = 1;
/// Simulation and log grid spacing.
pub const GRID_DT: f64 = 0.1;
const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
    #[error("invalid scenario map: {0}")]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub id: LaneId,
    pub centerline: Vec<[f64; 2]>,
    pub speed_limit: f64,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_neighbor: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_neighbor: Option<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopLineSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub lane: LaneId,
}

/// Serializable form of a [`SemanticMap`]; also what external planners receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub driveable_area: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub crosswalks: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub stop_lines: Vec<StopLineSpec>,
}

fn pt(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

impl MapSpec {
    pub fn build(&self) -> Result<SemanticMap, MapError> {
        let lanes = self
            .lanes
            .iter()
            .map(|l| {
                let centerline = Polyline::new(l.centerline.iter().copied().map(pt).collect())
                    .map_err(|e| ValidationError::new(format!("lane {}: {}", l.id, e.message())))?;
                Ok(Lane {
                    id: l.id.clone(),
                    centerline,
                    speed_limit: l.speed_limit,
                    successors: l.successors.clone(),
                    left_neighbor: l.left_neighbor.clone(),
                    right_neighbor: l.right_neighbor.clone(),
                })
            })
            .collect::<Result<Vec<_>, MapError>>()?;
        let polys = |list: &[Vec<[f64; 2]>], what: &str| {
            list.iter()
                .enumerate()
                .map(|(i, p)| {
                    Polygon::new(p.iter().copied().map(pt).collect())
                        .map_err(|e| MapError::Invalid(ValidationError::new(format!("{what} {i}: {}", e.message()))))
                })
                .collect::<Result<Vec<_>, MapError>>()
        };
        let stop_lines = self
            .stop_lines
            .iter()
            .map(|s| StopLine {
                start: pt(s.start),
                end: pt(s.end),
                lane_id: s.lane.clone(),
            })
            .collect();
        SemanticMap::new(
            lanes,
            polys(&self.driveable_area, "driveable polygon")?,
            polys(&self.crosswalks, "crosswalk")?,
            stop_lines,
        )
    }
}

/// One expert-log sample; the pose is the rear axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub steer: f64,
}

/// One agent observation; the pose is the box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub id: String,
    pub category: AgentCategory,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub dims: VehicleDims,
    pub limits: ModelLimits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<ControllerGains>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMetadata {
    pub city: String,
    pub seed: u64,
    #[serde(default)]
    pub left_hand_traffic: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub id: String,
    pub kind: String,
    pub metadata: ScenarioMetadata,
    pub dt: f64,
    pub map: MapSpec,
    pub ego: EgoSpec,
    pub expert: Vec<EgoRecord>,
    #[serde(default)]
    pub agents: Vec<TrackSpec>,
    pub goal: Pose2D,
    /// Explicit lane sequence; planned from the start pose when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<LaneId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idm: Option<IdmParams>,
    #[serde(default)]
    pub tags: Vec<ScenarioTag>,
}

impl ScenarioFile {
    /// Canonical text form: sorted keys, shortest round-trip floats, trailing newline.
    pub fn to_json(&self) -> Result<String, ScenarioError> {
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Applies a rigid motion, optionally preceded by a reflection across the
    /// x axis. A reflection also flips the traffic side and swaps left and
    /// right lane neighbors.
    pub fn transformed(&self, tf: &RigidTransform) -> ScenarioFile {
        let mut out = self.clone();
        let p2 = |p: [f64; 2]| {
            let q = tf.apply(pt(p));
            [q.x, q.y]
        };
        for lane in &mut out.map.lanes {
            lane.centerline = lane.centerline.iter().copied().map(p2).collect();
            if tf.mirror {
                std::mem::swap(&mut lane.left_neighbor, &mut lane.right_neighbor);
            }
        }
        for poly in out.map.driveable_area.iter_mut().chain(out.map.crosswalks.iter_mut()) {
            *poly = poly.iter().copied().map(p2).collect();
        }
        for sl in &mut out.map.stop_lines {
            sl.start = p2(sl.start);
            sl.end = p2(sl.end);
        }
        for r in &mut out.expert {
            let q = tf.apply(Point2::new(r.x, r.y));
            r.x = q.x;
            r.y = q.y;
            r.heading = tf.heading(r.heading);
            if tf.mirror {
                r.steer = -r.steer;
            }
        }
        for tr in &mut out.agents {
            for s in &mut tr.states {
                let q = tf.apply(Point2::new(s.x, s.y));
                let v = tf.apply_vector(Point2::new(s.vx, s.vy));
                *s = AgentRecord {
                    t: s.t,
                    x: q.x,
                    y: q.y,
                    heading: tf.heading(s.heading),
                    vx: v.x,
                    vy: v.y,
                };
            }
        }
        let g = tf.apply(out.goal.position());
        out.goal = Pose2D::new(g.x, g.y, tf.heading(out.goal.heading));
        if tf.mirror {
            out.metadata.left_hand_traffic = !out.metadata.left_hand_traffic;
        }
        out
    }
}

/// `p ↦ R(theta)·M·p + t`, where `M` reflects across the x axis when `mirror` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub mirror: bool,
}

impl RigidTransform {
    pub fn mirror_x() -> Self {
        Self {
            theta: 0.0,
            tx: 0.0,
            ty: 0.0,
            mirror: true,
        }
    }

    pub fn apply_vector(&self, v: Point2) -> Point2 {
        let y = if self.mirror { -v.y } else { v.y };
        let (s, c) = self.theta.sin_cos();
        Point2::new(c * v.x - s * y, s * v.x + c * y)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.apply_vector(p).add(Point2::new(self.tx, self.ty))
    }

    pub fn heading(&self, h: f64) -> f64 {
        let h = if self.mirror { -h } else { h };
        crate::geometry::normalize_angle(h + self.theta)
    }
}

/// A validated scenario with its map, logs and route built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub map: SemanticMap,
    pub expert: Vec<EgoState>,
    pub agents: Vec<TrackedObject>,
    pub route: Route,
}

fn on_grid(t: f64, t0: f64, dt: f64) -> bool {
    let k = ((t - t0) / dt).round();
    (t - (t0 + k * dt)).abs() <= GRID_TOLERANCE
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(ValidationError::new(m));
        if file.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        if file.id.is_empty() {
            return Err(invalid("scenario id is empty".into()));
        }
        if (file.dt - GRID_DT).abs() > 1e-12 {
            return Err(invalid(format!("dt must be {GRID_DT}, got {}", file.dt)));
        }
        file.ego.dims.validate()?;
        file.ego.limits.validate()?;
        if let Some(g) = &file.ego.gains {
            let v = [g.lookahead_base, g.lookahead_speed_gain, g.speed_kp, g.steer_kp];
            if !v.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(invalid("controller gains must be positive".into()));
            }
        }
        if let Some(p) = &file.idm {
            p.validate()?;
        }
        let map = file.map.build()?;

        if file.expert.len() < 2 {
            return Err(invalid("expert log needs at least two samples".into()));
        }
        let t0 = file.expert[0].t;
        let mut expert = Vec::with_capacity(file.expert.len());
        for (i, r) in file.expert.iter().enumerate() {
            if !all_finite(&[r.t, r.x, r.y, r.heading, r.v, r.a, r.steer]) {
                return Err(invalid(format!("expert sample {i} is not finite")));
            }
            if (r.t - (t0 + i as f64 * file.dt)).abs() > GRID_TOLERANCE {
                return Err(invalid(format!("expert sample {i} at t={} is off the {} s grid", r.t, file.dt)));
            }
            expert.push(EgoState {
                time: r.t,
                pose: Pose2D::new(r.x, r.y, r.heading),
                velocity: r.v,
                acceleration: r.a,
                steering_angle: r.steer,
                dims: file.ego.dims,
            });
        }

        let mut ids = BTreeSet::new();
        let mut agents = Vec::with_capacity(file.agents.len());
        for tr in &file.agents {
            if tr.id == crate::sim::EGO_ID || !ids.insert(tr.id.clone()) {
                return Err(invalid(format!("agent id {:?} is reserved or duplicated", tr.id)));
            }
            for s in &tr.states {
                if !all_finite(&[s.t, s.x, s.y, s.heading, s.vx, s.vy]) {
                    return Err(invalid(format!("agent {} has a non-finite state", tr.id)));
                }
                if !on_grid(s.t, t0, file.dt) {
                    return Err(invalid(format!("agent {} state at t={} is off the grid", tr.id, s.t)));
                }
            }
            let obj = TrackedObject {
                id: tr.id.clone(),
                category: tr.category,
                states: tr
                    .states
                    .iter()
                    .map(|s| AgentState {
                        time: s.t,
                        pose: Pose2D::new(s.x, s.y, s.heading),
                        velocity: Point2::new(s.vx, s.vy),
                    })
                    .collect(),
                length: tr.length,
                width: tr.width,
            };
            obj.validate()?;
            agents.push(obj);
        }

        let t_end = expert[expert.len() - 1].time;
        for tag in &file.tags {
            if !(tag.t_start < tag.t_end && tag.t_start >= t0 - GRID_TOLERANCE && tag.t_end <= t_end + GRID_TOLERANCE) {
                return Err(invalid(format!(
                    "tag {} interval [{}, {}] is empty or outside the log",
                    tag.kind.as_str(),
                    tag.t_start,
                    tag.t_end
                )));
            }
            for s in &tag.subjects {
                if !ids.contains(s) {
                    return Err(invalid(format!("tag {} names unknown agent {s}", tag.kind.as_str())));
                }
            }
            if let Some(lane) = &tag.lane {
                map.lane(lane)?;
            }
        }
        if !all_finite(&[file.goal.x, file.goal.y, file.goal.heading]) {
            return Err(invalid("goal is not finite".into()));
        }

        let start = expert[0].pose;
        let route = match &file.route {
            Some(lanes) => Route::from_lanes(&map, lanes, &start, &file.goal)?,
            None => map.plan_route(&start, &file.goal)?,
        };
        Ok(Self {
            file,
            map,
            expert,
            agents,
            route,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_file(ScenarioFile::from_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.file.to_json()?).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn id(&self) -> &str {
        &self.file.id
    }

    pub fn dims(&self) -> VehicleDims {
        self.file.ego.dims
    }

    pub fn limits(&self) -> ModelLimits {
        self.file.ego.limits
    }

    pub fn gains(&self) -> ControllerGains {
        self.file.ego.gains.unwrap_or_default()
    }

    pub fn idm(&self) -> IdmParams {
        self.file.idm.unwrap_or_default()
    }

    pub fn left_hand_traffic(&self) -> bool {
        self.file.metadata.left_hand_traffic
    }

    pub fn start_time(&self) -> f64 {
        self.expert[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.expert[self.expert.len() - 1].time
    }

    pub fn tags(&self) -> &[ScenarioTag] {
        &self.file.tags
    }
}
