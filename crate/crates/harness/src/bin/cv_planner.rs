//! Reference external planner: constant-velocity extrapolation over the
//! stdio protocol. `--fault` makes it misbehave in one documented way so the
//! harness error paths can be exercised.

use std::io::{BufRead, Write};

use clap::{Parser, ValueEnum};

use planbench_core::geometry::{EgoState, Pose2D, VehicleDims};
use planbench_core::planners::constant_velocity_plan;
use planbench_core::protocol::{decode_request, encode, Reply, Request, WireState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// A line that is not JSON.
    Garbage,
    /// A `ready` reply where a plan is expected.
    WrongType,
    /// Plan states with decreasing timestamps.
    Decreasing,
    /// A plan with no states.
    Empty,
    /// A plan covering half the horizon.
    Short,
    /// Plan states without coordinates.
    MissingField,
    /// Never answers the plan request.
    Silent,
    /// Exits with status 1 instead of answering.
    Crash,
}

#[derive(Parser)]
#[command(name = "planbench-cv-planner", about = "Constant-velocity planner speaking the planbench stdio protocol")]
struct Args {
    #[arg(long, value_enum)]
    fault: Option<Fault>,
    /// Only misbehave in this scenario.
    #[arg(long)]
    fault_on: Option<String>,
    /// Answer this many plan requests correctly before misbehaving.
    #[arg(long, default_value_t = 0)]
    fault_after: usize,
}

struct Session {
    dims: VehicleDims,
    dt: f64,
    horizon: f64,
    faulty: bool,
    answered: usize,
}

fn send(out: &mut impl Write, text: &str) {
    // A closed pipe means the harness is gone; nothing left to do.
    if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
        std::process::exit(0);
    }
}

fn main() {
    let args = Args::parse();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    let mut session: Option<Session> = None;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req = match decode_request(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{e}");
                std::process::exit(1);
            }
        };
        match req {
            Request::Init {
                scenario_id,
                dt,
                horizon,
                ego_dims,
                ..
            } => {
                let faulty = args.fault.is_some() && args.fault_on.as_ref().is_none_or(|id| *id == scenario_id);
                session = Some(Session {
                    dims: ego_dims,
                    dt,
                    horizon,
                    faulty,
                    answered: 0,
                });
                send(&mut out, &encode(&Reply::Ready));
            }
            Request::PlanRequest { time, ego, .. } => {
                let Some(s) = session.as_mut() else {
                    eprintln!("plan request before init");
                    std::process::exit(1);
                };
                let state = EgoState {
                    time,
                    pose: Pose2D::new(ego.x, ego.y, ego.heading),
                    velocity: ego.v,
                    acceleration: ego.a,
                    steering_angle: ego.steer,
                    dims: s.dims,
                };
                let fault = args.fault.filter(|_| s.faulty && s.answered >= args.fault_after);
                s.answered += 1;
                let horizon = if fault == Some(Fault::Short) { s.horizon / 2.0 } else { s.horizon };
                let mut states: Vec<WireState> = constant_velocity_plan(&state, time, horizon, s.dt)
                    .iter()
                    .map(WireState::from)
                    .collect();
                let reply = match fault {
                    None | Some(Fault::Short) => encode(&Reply::Plan { states }),
                    Some(Fault::Garbage) => "this is not a plan\n".to_string(),
                    Some(Fault::WrongType) => encode(&Reply::Ready),
                    Some(Fault::Decreasing) => {
                        states.reverse();
                        encode(&Reply::Plan { states })
                    }
                    Some(Fault::Empty) => encode(&Reply::Plan { states: vec![] }),
                    Some(Fault::MissingField) => {
                        let bare: Vec<_> = states.iter().map(|w| serde_json::json!({ "t": w.t })).collect();
                        format!("{}\n", serde_json::json!({ "type": "plan", "states": bare }))
                    }
                    Some(Fault::Silent) => continue,
                    Some(Fault::Crash) => std::process::exit(1),
                };
                send(&mut out, &reply);
            }
            Request::Shutdown => break,
        }
    }
}
