mod common;

use common::*;
use planbench_core::geometry::{Pose2D, TrajectorySample};
use planbench_core::planners::{BrakeToStopPlanner, ConstantVelocityPlanner, IdmRouteFollower, LogReplayPlanner};
use planbench_core::sim::*;

fn all_planners() -> Vec<Box<dyn Planner>> {
    vec![
        Box::new(LogReplayPlanner::default()),
        Box::new(ConstantVelocityPlanner),
        Box::new(IdmRouteFollower::default()),
        Box::new(BrakeToStopPlanner::default()),
    ]
}

#[test]
fn fifteen_second_open_loop_run_queries_thirty_times() {
    let sc = straight_scenario();
    let log = run_open_loop(&sc, &mut ConstantVelocityPlanner, &SimConfig::default());
    assert_eq!(log.plans.len(), 30);
    assert_eq!(log.steps.len(), 151);
    assert_eq!(log.termination, Termination::EndOfLog);
    let times: Vec<f64> = log.plans.iter().map(|p| p.time).collect();
    assert_eq!(times[1], 0.5);
    assert_eq!(times[29], 14.5);
}

#[test]
fn constant_velocity_plan_has_81_samples_one_metre_apart() {
    let sc = straight_scenario();
    let mut p = ConstantVelocityPlanner;
    let q = PlannerQuery {
        time: 0.0,
        ego: sc.expert[0],
        agents: vec![],
        route: &sc.route,
        goal: sc.file.goal,
        map: &sc.map,
        dt: 0.1,
        horizon: 8.0,
    };
    let traj = query_planner(&mut p, &q).unwrap();
    assert_eq!(traj.len(), 81);
    assert!((traj.end_time() - 8.0).abs() < 1e-9);
    for w in traj.samples().windows(2) {
        assert!((w[0].pose.distance(&w[1].pose) - 1.0).abs() < 1e-9);
    }
}

struct Scripted(fn(f64) -> Vec<TrajectorySample>);

impl Planner for Scripted {
    fn name(&self) -> String {
        "scripted".into()
    }
    fn initialize(&mut self, _: &PlannerInit) -> Result<(), PlannerError> {
        Ok(())
    }
    fn plan(&mut self, q: &PlannerQuery) -> Result<Vec<TrajectorySample>, PlannerError> {
        Ok((self.0)(q.time))
    }
}

fn sample(t: f64, x: f64) -> TrajectorySample {
    TrajectorySample {
        time: t,
        pose: Pose2D::new(x, 0.0, 0.0),
        velocity: Some(10.0),
    }
}

fn failure_kind(f: fn(f64) -> Vec<TrajectorySample>) -> String {
    let sc = straight_scenario();
    let log = run_closed_loop(&sc, &mut Scripted(f), &SimConfig::default(), false);
    match log.termination {
        Termination::PlannerFailure { kind, .. } => kind,
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn malformed_plans_fail_the_scenario_with_typed_errors() {
    assert_eq!(failure_kind(|_| vec![]), "malformed_plan");
    assert_eq!(
        failure_kind(|t| (0..=80).rev().map(|k| sample(t + k as f64 * 0.1, 20.0)).collect()),
        "malformed_plan"
    );
    assert_eq!(
        failure_kind(|t| (0..=30).map(|k| sample(t + k as f64 * 0.1, 20.0 + k as f64)).collect()),
        "horizon_shortfall"
    );
    assert_eq!(
        failure_kind(|t| (0..=80).map(|k| sample(t + k as f64 * 0.1, 1e6)).collect()),
        "malformed_plan"
    );
    assert_eq!(
        failure_kind(|t| (0..=80).map(|k| sample(t + 0.3 + k as f64 * 0.1, 20.0)).collect()),
        "malformed_plan"
    );
}

#[test]
fn off_grid_plans_are_resampled() {
    let sc = straight_scenario();
    let f: fn(f64) -> Vec<TrajectorySample> = |t| (0..=32).map(|k| sample(t + k as f64 * 0.25, 20.0 + 2.5 * k as f64)).collect();
    let log = run_open_loop(&sc, &mut Scripted(f), &SimConfig::default());
    assert_eq!(log.termination, Termination::EndOfLog);
    assert!(log.plans.iter().all(|p| p.trajectory.uniform_dt().is_some_and(|d| (d - 0.1).abs() < 1e-9)));
}

#[test]
fn open_loop_ego_is_the_expert_bit_for_bit() {
    for sc in [straight_scenario(), curve_scenario()] {
        for mut p in all_planners() {
            let log = run_open_loop(&sc, p.as_mut(), &SimConfig::default());
            assert_eq!(log.termination, Termination::EndOfLog, "{}", p.name());
            assert_eq!(log.ego_states(), sc.expert, "{}", p.name());
        }
    }
}

#[test]
fn log_replay_plans_match_the_expert_future() {
    let sc = curve_scenario();
    let log = run_open_loop(&sc, &mut LogReplayPlanner::default(), &SimConfig::default());
    for plan in &log.plans {
        for s in plan.trajectory.samples() {
            if let Some(e) = sc.expert.iter().find(|e| e.time == s.time) {
                assert_eq!(s.pose, e.pose);
                assert_eq!(s.velocity, Some(e.velocity));
            }
        }
    }
}

fn max_lateral_deviation(log: &SimLog, expert: &[planbench_core::geometry::EgoState]) -> f64 {
    log.steps
        .iter()
        .zip(expert)
        .map(|(s, e)| e.pose.to_local(s.ego.pose.position()).y.abs())
        .fold(0.0, f64::max)
}

#[test]
fn closed_loop_log_replay_stays_close_to_the_expert() {
    for sc in [straight_scenario(), curve_scenario()] {
        let log = run_closed_loop(&sc, &mut LogReplayPlanner::default(), &SimConfig::default(), false);
        assert!(!log.failed(), "{:?}", log.termination);
        let dev = max_lateral_deviation(&log, &sc.expert);
        assert!(dev < 0.3, "{} deviates {dev}", sc.id());
    }
}

#[test]
fn closed_loop_runs_are_deterministic() {
    let sc = curve_scenario();
    for reactive in [false, true] {
        let a = run_closed_loop(&sc, &mut IdmRouteFollower::default(), &SimConfig::default(), reactive);
        let b = run_closed_loop(&sc, &mut IdmRouteFollower::default(), &SimConfig::default(), reactive);
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
    }
}

#[test]
fn max_duration_cuts_the_run() {
    let sc = straight_scenario();
    let cfg = SimConfig {
        max_duration: Some(3.0),
        ..SimConfig::default()
    };
    let log = run_closed_loop(&sc, &mut LogReplayPlanner::default(), &cfg, false);
    assert_eq!(log.termination, Termination::MaxDuration);
    assert_eq!(log.steps.len(), 31);
}

#[test]
fn steps_lie_on_the_time_grid_with_one_active_plan() {
    let sc = straight_scenario();
    let log = run_closed_loop(&sc, &mut IdmRouteFollower::default(), &SimConfig::default(), true);
    for (i, s) in log.steps.iter().enumerate() {
        assert!((s.time - i as f64 * 0.1).abs() < 1e-9);
        assert!(s.plan_id < log.plans.len());
        assert!(log.plans[s.plan_id].time <= s.time + 1e-9);
    }
}
