//! Line-delimited JSON protocol for planners running as separate processes.
//!
//! The harness writes one request object per line to the planner's stdin
//! and reads one reply per line from its stdout:
//!
//! ```text
//! -> {"type":"init","scenario_id":..,"map":{..},"route":[..],"goal":{..},"dt":0.1,"horizon":8.0,"ego_dims":{..}}
//! <- {"type":"ready"}
//! -> {"type":"plan_request","time":t,"ego":{..},"agents":[..]}
//! <- {"type":"plan","states":[{"t":..,"x":..,"y":..,"heading":..,"v":..}, ..]}
//! -> {"type":"shutdown"}
//! ```
//!
//! Numbers are written in the shortest decimal form that parses back to the
//! same double. Unknown fields are ignored; an unknown message type or a
//! line that is not a JSON object is a protocol violation.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geometry::{AgentCategory, EgoState, ObjectSnapshot, Point2, Pose2D, TrajectorySample, VehicleDims};
use crate::map::LaneId;
use crate::scenario::MapSpec;
use crate::sim::{Planner, PlannerError, PlannerInit, PlannerQuery};

pub const TIMEOUT_ENV: &str = "PLANBENCH_PLANNER_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 1000;
/// The handshake may take this many query timeouts, to allow for start-up.
pub const HANDSHAKE_FACTOR: u64 = 10;

/// Query timeout from the environment, or the default.
pub fn timeout_from_env() -> u64 {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&ms| ms > 0)
        .unwrap_or(DEFAULT_TIMEOUT_MS)
}

/// Ego state on the wire; the pose is the rear axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireEgo {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub steer: f64,
}

impl From<&EgoState> for WireEgo {
    fn from(e: &EgoState) -> Self {
        Self {
            x: e.pose.x,
            y: e.pose.y,
            heading: e.pose.heading,
            v: e.velocity,
            a: e.acceleration,
            steer: e.steering_angle,
        }
    }
}

/// Agent state on the wire; the pose is the box center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAgent {
    pub id: String,
    pub category: AgentCategory,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
}

impl From<&ObjectSnapshot> for WireAgent {
    fn from(o: &ObjectSnapshot) -> Self {
        Self {
            id: o.id.clone(),
            category: o.category,
            x: o.pose.x,
            y: o.pose.y,
            heading: o.pose.heading,
            vx: o.velocity.x,
            vy: o.velocity.y,
            length: o.length,
            width: o.width,
        }
    }
}

impl WireAgent {
    pub fn snapshot(&self) -> ObjectSnapshot {
        ObjectSnapshot {
            id: self.id.clone(),
            category: self.category,
            pose: Pose2D::new(self.x, self.y, self.heading),
            velocity: Point2::new(self.vx, self.vy),
            length: self.length,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
}

impl From<&TrajectorySample> for WireState {
    fn from(s: &TrajectorySample) -> Self {
        Self {
            t: s.time,
            x: s.pose.x,
            y: s.pose.y,
            heading: s.pose.heading,
            v: s.velocity,
        }
    }
}

impl WireState {
    /// The heading is taken as sent; normalization happens in validation.
    pub fn sample(&self) -> TrajectorySample {
        TrajectorySample {
            time: self.t,
            pose: Pose2D {
                x: self.x,
                y: self.y,
                heading: self.heading,
            },
            velocity: self.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Init {
        scenario_id: String,
        map: MapSpec,
        route: Vec<LaneId>,
        goal: Pose2D,
        dt: f64,
        horizon: f64,
        ego_dims: VehicleDims,
    },
    PlanRequest {
        time: f64,
        ego: WireEgo,
        agents: Vec<WireAgent>,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Ready,
    Plan { states: Vec<WireState> },
}

/// One message per line, keys sorted.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let v = serde_json::to_value(msg).expect("wire types serialize");
    let mut s = serde_json::to_string(&v).expect("values serialize");
    s.push('\n');
    s
}

pub fn decode_request(line: &str) -> Result<Request, PlannerError> {
    serde_json::from_str(line).map_err(|e| PlannerError::Protocol(format!("bad request: {e}")))
}

/// Parses a reply line. Anything that is not an object with a known `type`
/// is a protocol violation; a `plan` whose contents do not parse is a
/// malformed plan.
pub fn decode_reply(line: &str) -> Result<Reply, PlannerError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| PlannerError::Protocol(format!("reply is not JSON: {e}")))?;
    let kind = value
        .as_object()
        .ok_or_else(|| PlannerError::Protocol("reply is not a JSON object".into()))?
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| PlannerError::Protocol("reply has no type".into()))?
        .to_string();
    match kind.as_str() {
        "ready" => Ok(Reply::Ready),
        "plan" => serde_json::from_value(value).map_err(|e| PlannerError::MalformedPlan(e.to_string())),
        other => Err(PlannerError::Protocol(format!("unknown reply type `{other}`"))),
    }
}

enum Line {
    Text(String),
    Eof,
    Failed(String),
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Line>,
}

impl Session {
    fn send(&mut self, req: &Request) -> Result<(), PlannerError> {
        self.stdin
            .write_all(encode(req).as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| PlannerError::Crashed(format!("write failed: {e}")))
    }

    fn receive(&mut self, timeout_ms: u64) -> Result<Reply, PlannerError> {
        match self.lines.recv_timeout(Duration::from_millis(timeout_ms)) {
            Ok(Line::Text(l)) => decode_reply(&l),
            Ok(Line::Failed(e)) => Err(PlannerError::Crashed(e)),
            Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(PlannerError::Crashed(match status {
                    Some(s) => format!("planner exited ({s})"),
                    None => "planner closed its output".into(),
                }))
            }
            Err(RecvTimeoutError::Timeout) => Err(PlannerError::Timeout(timeout_ms)),
        }
    }

    fn close(mut self) {
        let _ = self.send(&Request::Shutdown);
        drop(self.stdin);
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A planner behind the stdio protocol. Each scenario gets a fresh process.
pub struct ExternalPlanner {
    command: Vec<String>,
    timeout_ms: u64,
    session: Option<Session>,
}

impl ExternalPlanner {
    pub fn new(command: Vec<String>, timeout_ms: u64) -> Self {
        Self {
            command,
            timeout_ms,
            session: None,
        }
    }

    /// From a whitespace-separated command line.
    pub fn from_command_line(cmd: &str, timeout_ms: u64) -> Result<Self, PlannerError> {
        let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if parts.is_empty() {
            return Err(PlannerError::Spawn("empty planner command".into()));
        }
        Ok(Self::new(parts, timeout_ms))
    }

    fn spawn(&self) -> Result<Session, PlannerError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| PlannerError::Spawn(format!("{}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                let msg = match reader.read_line(&mut line) {
                    Ok(0) => Line::Eof,
                    Ok(_) => Line::Text(line),
                    Err(e) => Line::Failed(e.to_string()),
                };
                let last = !matches!(msg, Line::Text(_));
                if tx.send(msg).is_err() || last {
                    return;
                }
            }
        });
        Ok(Session { child, stdin, lines: rx })
    }

    fn session(&mut self) -> Result<&mut Session, PlannerError> {
        self.session
            .as_mut()
            .ok_or_else(|| PlannerError::Internal("planner not initialized".into()))
    }
}

impl Planner for ExternalPlanner {
    fn name(&self) -> String {
        format!("exec:{}", self.command.join(" "))
    }

    fn initialize(&mut self, init: &PlannerInit) -> Result<(), PlannerError> {
        if let Some(old) = self.session.take() {
            old.close();
        }
        let mut s = self.spawn()?;
        let sc = init.scenario;
        let req = Request::Init {
            scenario_id: sc.id().to_string(),
            map: sc.file.map.clone(),
            route: sc.route.lane_ids(),
            goal: sc.file.goal,
            dt: init.dt,
            horizon: init.horizon,
            ego_dims: sc.dims(),
        };
        let handshake = s.send(&req).and_then(|_| s.receive(self.timeout_ms * HANDSHAKE_FACTOR));
        match handshake {
            Ok(Reply::Ready) => {
                self.session = Some(s);
                Ok(())
            }
            Ok(Reply::Plan { .. }) => {
                s.close();
                Err(PlannerError::Protocol("expected ready, got plan".into()))
            }
            Err(e) => {
                s.close();
                Err(e)
            }
        }
    }

    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        let timeout = self.timeout_ms;
        let s = self.session()?;
        s.send(&Request::PlanRequest {
            time: q.time,
            ego: WireEgo::from(&q.ego),
            agents: q.agents.iter().map(WireAgent::from).collect(),
        })?;
        match s.receive(timeout)? {
            Reply::Plan { states } => Ok(states.iter().map(WireState::sample).collect()),
            Reply::Ready => Err(PlannerError::Protocol("expected plan, got ready".into())),
        }
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.session.take() {
            s.close();
        }
    }
}

impl Drop for ExternalPlanner {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_classification() {
        assert_eq!(decode_reply(r#"{"type":"ready","extra":1}"#), Ok(Reply::Ready));
        let plan = decode_reply(r#"{"type":"plan","states":[{"t":0.5,"x":1,"y":2,"heading":0.1}]}"#).unwrap();
        assert!(matches!(plan, Reply::Plan { ref states } if states.len() == 1 && states[0].v.is_none()));
        for bad in ["not json", "[1,2]", r#"{"kind":"plan"}"#, r#"{"type":"hello"}"#] {
            assert!(matches!(decode_reply(bad), Err(PlannerError::Protocol(_))), "{bad}");
        }
        assert!(matches!(
            decode_reply(r#"{"type":"plan","states":[{"t":0.5}]}"#),
            Err(PlannerError::MalformedPlan(_))
        ));
    }

    #[test]
    fn numbers_round_trip_on_the_wire() {
        let e = WireEgo {
            x: 0.1 + 0.2,
            y: -1.0 / 3.0,
            heading: std::f64::consts::PI,
            v: 1e-17,
            a: 12345.678901234567,
            steer: 0.0,
        };
        let line = encode(&Request::PlanRequest {
            time: 1.5,
            ego: e,
            agents: vec![],
        });
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        match decode_request(&line).unwrap() {
            Request::PlanRequest { ego, .. } => assert_eq!(ego, e),
            other => panic!("{other:?}"),
        }
    }
}
