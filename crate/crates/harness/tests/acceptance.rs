//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::cmp::Ordering;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use planbench::batch::{run_batch, BatchConfig, Builtin, PlannerSpec, Report};
use planbench::generate::{generate, regression, City, GenerateSpec, KINDS};
use planbench_core::agents::{idm_accel, IdmParams};
use planbench_core::geometry::{box_overlap, EgoState, Pose2D, VehicleDims};
use planbench_core::metrics::{evaluate, ttc_pair, ComfortLimits, MetricSet, MetricValue, TTC_HORIZON};
use planbench_core::scenario::{RigidTransform, Scenario, ScenarioFile};
use planbench_core::scoring::{aggregate, Direction, PolicyKind, Registry, ScenarioMetrics, ScoreReport, ScoringPolicy};
use planbench_core::sim::{run, SimConfig, SimMode};
use planbench_core::tagging::TagKind;
use planbench_core::vehicle::{step, ControlInput, ModelLimits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracles::*;

const CV_PLANNER: &str = env!("CARGO_BIN_EXE_planbench-cv-planner");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn no_progress(_: usize, _: usize, _: &str, _: bool) {}

fn batch(scenarios: &[Scenario], planner: PlannerSpec, mode: SimMode, jobs: usize) -> Result<Report, String> {
    let mut config = BatchConfig::new(planner, mode);
    config.jobs = jobs;
    run_batch(scenarios, &config, &mut no_progress).map_err(|e| e.to_string())
}

fn scenarios(files: Vec<ScenarioFile>) -> Vec<Scenario> {
    files.into_iter().map(|f| Scenario::from_file(f).unwrap()).collect()
}

fn every_kind(n: usize, city: City) -> GenerateSpec {
    GenerateSpec {
        counts: KINDS.iter().map(|k| (k.to_string(), n)).collect(),
        city,
    }
}

fn collided(sc: &Scenario, planner: Builtin, mode: SimMode) -> (bool, MetricSet) {
    let log = run(sc, planner.planner().as_mut(), &SimConfig::with_mode(mode));
    let m = evaluate(&log, sc, &ComfortLimits::default());
    (m.value("collision") == Some(1.0), m)
}

fn c1_log_replay_fidelity() -> Outcome {
    let mut all = scenarios(generate(2024, &every_kind(5, City::Boston)).map_err(|e| e.to_string())?);
    // Keep the scenarios whose recorded drive is itself collision-free.
    all.retain(|sc| !collided(sc, Builtin::LogReplay, SimMode::OpenLoop).0);
    ensure!(all.len() >= 50, "only {} collision-free scenarios", all.len());
    let start = Instant::now();
    let report = batch(&all, PlannerSpec::Builtin(Builtin::LogReplay), SimMode::ClosedLoopNonreactive, 4)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for r in &report.scenarios {
        ensure!(!r.failed, "{} failed: {:?}", r.id, r.termination);
        ensure!(r.metrics.value("collision") == Some(0.0), "{} collides", r.id);
        ensure!(r.metrics.value("off_road") == Some(0.0), "{} leaves the road", r.id);
        worst = worst.max(r.metrics.value("lat_pos_err_max").unwrap_or(f64::INFINITY));
    }
    ensure!(worst < 0.3, "max lateral deviation {worst:.3} m");
    ensure!(elapsed < 60.0, "batch took {elapsed:.1} s");
    Ok(format!(
        "{} scenarios, max lateral deviation {worst:.3} m, {elapsed:.1} s with 4 jobs",
        report.scenarios.len()
    ))
}

fn same_bits(a: &EgoState, b: &EgoState) -> bool {
    let f = |s: &EgoState| {
        [s.time, s.pose.x, s.pose.y, s.pose.heading, s.velocity, s.acceleration, s.steering_angle].map(f64::to_bits)
    };
    f(a) == f(b)
}

fn c2_open_loop_identity() -> Outcome {
    let all = scenarios(generate(31, &every_kind(1, City::Pittsburgh)).map_err(|e| e.to_string())?);
    let config = SimConfig::with_mode(SimMode::OpenLoop);
    let mut planners: Vec<(String, PlannerSpec)> =
        Builtin::ALL.iter().map(|b| (b.as_str().to_string(), PlannerSpec::Builtin(*b))).collect();
    planners.push(("external".into(), PlannerSpec::Exec(CV_PLANNER.into())));
    let mut runs = 0;
    for (name, spec) in &planners {
        for sc in &all {
            let mut p = spec.build(5000).map_err(|e| e.to_string())?;
            let log = run(sc, p.as_mut(), &config);
            ensure!(!log.failed(), "{name} on {}: {:?}", sc.id(), log.termination);
            ensure!(log.steps.len() == sc.expert.len(), "{name} on {}: {} steps", sc.id(), log.steps.len());
            for (s, e) in log.steps.iter().zip(&sc.expert) {
                ensure!(same_bits(&s.ego, e), "{name} on {} differs at t={}", sc.id(), s.time);
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} planner/scenario pairs bit-identical"))
}

fn c3_overtake() -> Outcome {
    let sc = Scenario::from_file(regression("overtake_fast_oncoming", City::Boston).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (_, open) = collided(&sc, Builtin::LogReplay, SimMode::OpenLoop);
    let similarity = Registry::builtin().similarity_score(&open).ok_or("no similarity score")?;
    ensure!(similarity >= 0.8, "open-loop similarity {similarity:.3}");
    let (reactive, m) = collided(&sc, Builtin::LogReplay, SimMode::ClosedLoopReactive);
    ensure!(reactive, "log replay does not collide in reactive closed loop");
    let (idm, _) = collided(&sc, Builtin::IdmRouteFollower, SimMode::ClosedLoopReactive);
    ensure!(!idm, "the IDM follower collides too");
    let detail = m.get("collision").and_then(|c| c.detail.clone()).unwrap_or_default();
    Ok(format!("open-loop similarity {similarity:.3}, reactive collision {detail}"))
}

fn c4_non_reactive_artifact() -> Outcome {
    let sc = Scenario::from_file(regression("follower_fixture", City::Boston).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (hit, m) = collided(&sc, Builtin::BrakeToStop, SimMode::ClosedLoopNonreactive);
    ensure!(hit, "no collision in non-reactive mode");
    let rear_end = m.get("collision").and_then(|c| c.detail.as_ref()).and_then(|d| d.get("rear_end")).cloned();
    ensure!(rear_end == Some(true.into()), "collision is not rear-end: {rear_end:?}");
    let (hit, _) = collided(&sc, Builtin::BrakeToStop, SimMode::ClosedLoopReactive);
    ensure!(!hit, "collision in reactive mode");
    Ok("rear-end hit when non-reactive, none when reactive".into())
}

fn rollout(controls: &[ControlInput], dt_control: f64, substeps: usize) -> EgoState {
    let lim = ModelLimits {
        max_steer: 10.0,
        max_steer_rate: 100.0,
        max_speed: 100.0,
        min_accel: -100.0,
        max_accel: 100.0,
    };
    let mut s = EgoState {
        time: 0.0,
        pose: Pose2D::new(0.0, 0.0, 0.0),
        velocity: 8.0,
        acceleration: 0.0,
        steering_angle: 0.0,
        dims: VehicleDims::default(),
    };
    let dt = dt_control / substeps as f64;
    for u in controls {
        for _ in 0..substeps {
            s = step(&s, *u, dt, &lim).unwrap();
        }
    }
    s
}

fn c5_numerical_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ttc_worst: f64 = 0.0;
    for i in 0..1000 {
        let (a, b) = if i % 2 == 0 {
            random_encounter(&mut rng)
        } else {
            (random_body(&mut rng, "a"), random_body(&mut rng, "b"))
        };
        match (ttc_pair(&a, &b, TTC_HORIZON), brute_ttc(&a, &b, TTC_HORIZON, 1e-4)) {
            (None, None) => {}
            (Some(x), Some(y)) => ttc_worst = ttc_worst.max((x - y).abs()),
            (x, y) => return Err(format!("ttc config {i}: {x:?} vs brute force {y:?}")),
        }
    }
    ensure!(ttc_worst <= 2e-3, "ttc error {ttc_worst}");

    let mut checked = 0;
    for i in 0..10_000 {
        let a = random_box(&mut rng, 3.0);
        let b = random_box(&mut rng, 3.0);
        if outline_distance(&a, &b) < 1e-6 && clip_area(&a.corners(), &b.corners()) < 1e-6 {
            continue;
        }
        // Points sampled in `a` that also fall inside `b`; disjoint boxes never share one.
        let frac = monte_carlo_overlap(&mut rng, &a, &b, 400);
        let expected = if frac > 0.0 {
            true
        } else {
            clip_area(&a.corners(), &b.corners()) > 0.0 || b.contains(a.center.position())
        };
        ensure!(box_overlap(&a, &b) == expected, "box pair {i}: sampled fraction {frac}");
        checked += 1;
    }

    let controls: Vec<ControlInput> = (0..20)
        .map(|_| ControlInput {
            acceleration: rng.gen_range(-1.0..1.0),
            steering_rate: rng.gen_range(-0.3..0.3),
        })
        .collect();
    let reference = rollout(&controls, 0.2, 2000);
    let err = |n| rollout(&controls, 0.2, n).pose.distance(&reference.pose);
    let (e1, e2, e4) = (err(1), err(2), err(4));
    let order = ((e1 / e2).log2() + (e2 / e4).log2()) / 2.0;
    ensure!((1.7..2.3).contains(&order), "observed order {order:.2}");
    Ok(format!(
        "ttc max error {ttc_worst:.1e} s, {checked} box pairs agree, bicycle order {order:.2}"
    ))
}

fn c6_idm_formula() -> Outcome {
    let p = IdmParams {
        desired_speed: 15.0,
        ..IdmParams::default()
    };
    let a = idm_accel(10.0, Some(20.0), 10.0, &p).map_err(|e| e.to_string())?;
    // Same inputs evaluated by hand: s* = 2 + 10·1.5, no closing speed.
    let s_star: f64 = 2.0 + 10.0 * 1.5;
    let oracle = 1.5 * (1.0 - (10.0f64 / 15.0).powi(4) - (s_star / 20.0).powi(2));
    ensure!((a - 0.120).abs() <= 1e-3, "idm_accel = {a}");
    ensure!((a - oracle).abs() <= 1e-12, "idm_accel = {a}, formula {oracle}");
    Ok(format!("idm_accel = {a:.4} m/s^2"))
}

fn c7_determinism() -> Outcome {
    let all = scenarios(generate(77, &every_kind(1, City::LasVegas)).map_err(|e| e.to_string())?);
    let spec = PlannerSpec::Builtin(Builtin::IdmRouteFollower);
    let a = batch(&all, spec.clone(), SimMode::ClosedLoopReactive, 1)?.to_json();
    let b = batch(&all, spec.clone(), SimMode::ClosedLoopReactive, 1)?.to_json();
    let c = batch(&all, spec.clone(), SimMode::ClosedLoopReactive, 4)?.to_json();
    let d = batch(&all, spec, SimMode::ClosedLoopReactive, 4)?.to_json();
    ensure!(a == b, "two serial runs differ");
    ensure!(a == c && c == d, "runs with 4 jobs differ from the serial run");
    Ok(format!("{} scenarios, {} byte report identical across 4 runs", all.len(), a.len()))
}

fn random_report(rng: &mut ChaCha8Rng, registry: &Registry, names: &[String]) -> Vec<MetricSet> {
    (0..rng.gen_range(1..4))
        .map(|_| {
            let mut m = MetricSet::default();
            for name in names {
                let spec = registry.spec(name).unwrap();
                let u: f64 = rng.gen();
                let v = match spec.direction {
                    Direction::BooleanViolation => (u > 0.8) as u8 as f64,
                    Direction::TargetOne => 1.0 + (u - 0.5) * 2.0 * spec.scale,
                    _ => u * 1.5 * spec.scale,
                };
                m.insert(name, MetricValue::new(v, ""));
            }
            m
        })
        .collect()
}

fn score(sets: &[MetricSet], policy: &ScoringPolicy, registry: &Registry) -> ScoreReport {
    let rows: Vec<ScenarioMetrics> = sets
        .iter()
        .enumerate()
        .map(|(i, m)| ScenarioMetrics {
            scenario_id: format!("s{i}"),
            failed: false,
            metrics: m.clone(),
        })
        .collect();
    aggregate(&rows, policy, registry).unwrap()
}

fn c8_scoring_properties() -> Outcome {
    let registry = Registry::builtin();
    let weighted = ScoringPolicy::with_kind(PolicyKind::WeightedSum);
    let hierarchy = ScoringPolicy::with_kind(PolicyKind::Hierarchy);
    let names: Vec<String> = weighted.weights.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let (a, b) = (random_report(&mut rng, &registry, &names), random_report(&mut rng, &registry, &names));

        let c = rng.gen_range(0.01..100.0);
        let mut scaled = weighted.clone();
        scaled.weights.values_mut().for_each(|w| *w *= c);
        let before = score(&a, &weighted, &registry).weighted_sum - score(&b, &weighted, &registry).weighted_sum;
        let after = score(&a, &scaled, &registry).weighted_sum - score(&b, &scaled, &registry).weighted_sum;
        if before.abs() > 1e-9 {
            ensure!(before.signum() == after.signum(), "pair {i}: scaling by {c} flips the ranking");
        }

        let name = &names[rng.gen_range(0..names.len())];
        let spec = registry.spec(name).unwrap();
        let delta: f64 = rng.gen();
        let mut better = a.clone();
        for m in &mut better {
            let v = m.value(name).unwrap();
            let moved = match spec.direction {
                Direction::HigherBetter => v + delta * spec.scale,
                Direction::TargetOne => 1.0 + (v - 1.0) * (1.0 - delta),
                _ => (v - delta * spec.scale).max(0.0),
            };
            m.insert(name, MetricValue::new(moved, ""));
        }
        let (s0, s1) = (score(&a, &weighted, &registry).weighted_sum, score(&better, &weighted, &registry).weighted_sum);
        ensure!(s1 >= s0 - 1e-12, "pair {i}: improving {name} lowers the score {s0} -> {s1}");

        let (mut safe, mut risky) = (a, b);
        for m in &mut safe {
            m.insert("collision", MetricValue::new(0.0, "bool"));
            m.insert("progress", MetricValue::new(rng.gen_range(0.0..0.2), "ratio"));
        }
        risky[0].insert("collision", MetricValue::new(1.0, "bool"));
        for m in &mut risky {
            m.insert("progress", MetricValue::new(1.0, "ratio"));
        }
        let order = score(&safe, &hierarchy, &registry).compare(&score(&risky, &hierarchy, &registry));
        ensure!(order == Ordering::Greater, "pair {i}: hierarchy prefers the colliding planner");
    }
    Ok("1000 random report pairs".into())
}

fn c9_protocol() -> Outcome {
    let all = scenarios(generate(9, &every_kind(1, City::Boston)).map_err(|e| e.to_string())?);
    let ten: Vec<Scenario> = all.into_iter().filter(|s| s.file.kind != "regression").take(10).collect();
    ensure!(ten.len() == 10, "only {} scenarios", ten.len());
    let report = batch(&ten, PlannerSpec::Exec(CV_PLANNER.into()), SimMode::ClosedLoopNonreactive, 1)?;
    for r in &report.scenarios {
        ensure!(!r.failed, "{}: {:?}", r.id, r.termination);
    }
    let faults = [
        ("garbage", "protocol_violation"),
        ("wrong-type", "protocol_violation"),
        ("decreasing", "malformed_plan"),
        ("empty", "malformed_plan"),
        ("missing-field", "malformed_plan"),
        ("short", "horizon_shortfall"),
        ("silent", "timeout"),
        ("crash", "planner_crash"),
    ];
    for (fault, kind) in faults {
        let mut config = BatchConfig::new(
            PlannerSpec::Exec(format!("{CV_PLANNER} --fault {fault} --fault-after 1")),
            SimMode::ClosedLoopNonreactive,
        );
        config.timeout_ms = 300;
        let r = run_batch(&ten[..1], &config, &mut no_progress).map_err(|e| e.to_string())?;
        let got = r.scenarios[0].termination.clone();
        let ok = matches!(&got, planbench_core::sim::Termination::PlannerFailure { kind: k, .. } if k == kind);
        ensure!(ok, "fault {fault}: expected {kind}, got {got:?}");
    }
    Ok(format!("10 clean scenarios, {} fault fixtures typed", faults.len()))
}

fn tag_kinds(f: &ScenarioFile) -> Vec<&'static str> {
    let mut k: Vec<&'static str> = f.tags.iter().map(|t| t.kind.as_str()).collect();
    k.sort();
    k
}

fn c10_tagger() -> Outcome {
    let mut tagged = 0;
    for city in [City::Boston, City::Pittsburgh, City::LasVegas, City::Singapore] {
        for f in generate(55, &every_kind(2, city)).map_err(|e| e.to_string())? {
            if TagKind::ALL.iter().any(|t| t.as_str() == f.kind) {
                ensure!(tag_kinds(&f).contains(&f.kind.as_str()), "{city:?} {} lacks its tag", f.id);
                tagged += 1;
            }
        }
    }
    let rht = generate(56, &every_kind(1, City::Boston)).map_err(|e| e.to_string())?;
    let lht = generate(56, &every_kind(1, City::Singapore)).map_err(|e| e.to_string())?;
    ensure!(rht.len() == lht.len(), "different scenario counts");
    for (r, l) in rht.iter().zip(&lht) {
        let mirrored = r.transformed(&RigidTransform::mirror_x());
        for (a, b) in mirrored.expert.iter().zip(&l.expert) {
            ensure!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9, "{} expert is not mirrored", r.id);
        }
        ensure!(tag_kinds(r) == tag_kinds(l), "{}: {:?} vs {:?}", r.id, tag_kinds(r), tag_kinds(l));
    }
    Ok(format!("{tagged} tagged scenarios, {} mirrored pairs", rht.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("C1 log-replay closed-loop fidelity", c1_log_replay_fidelity),
        ("C2 open-loop identity", c2_open_loop_identity),
        ("C3 overtake with faster oncoming car", c3_overtake),
        ("C4 non-reactive rear-end artifact", c4_non_reactive_artifact),
        ("C5 numerical oracles", c5_numerical_oracles),
        ("C6 IDM formula", c6_idm_formula),
        ("C7 determinism", c7_determinism),
        ("C8 scoring properties", c8_scoring_properties),
        ("C9 protocol conformance", c9_protocol),
        ("C10 tagger consistency", c10_tagger),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
