use planbench_core::agents::{reactive_step, AgentRuntimeState, IdmParams};
use planbench_core::geometry::{AgentCategory, ObjectSnapshot, Point2, Pose2D};
use planbench_core::map::{Lane, LaneId, LanePath, Polyline, SemanticMap};
use proptest::prelude::*;

fn road() -> SemanticMap {
    let lane = Lane {
        id: LaneId::new("road"),
        centerline: Polyline::new(vec![Point2::new(0.0, 0.0), Point2::new(5000.0, 0.0)]).unwrap(),
        speed_limit: 20.0,
        successors: vec![],
        left_neighbor: None,
        right_neighbor: None,
    };
    SemanticMap::new(vec![lane], vec![], vec![], vec![]).unwrap()
}

fn body(id: &str, x: f64, v: f64, len: f64) -> ObjectSnapshot {
    ObjectSnapshot {
        id: id.into(),
        category: AgentCategory::Vehicle,
        pose: Pose2D::new(x, 0.0, 0.0),
        velocity: Point2::new(v, 0.0),
        length: len,
        width: 1.9,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A scripted leader brakes and recovers with decelerations no harsher
    /// than the comfort value; IDM followers started at or beyond the safe
    /// headway never touch the body ahead.
    #[test]
    fn platoon_never_collides(
        v in 2.0f64..15.0,
        extra_gaps in prop::collection::vec(0.0f64..20.0, 1..5),
        lengths in prop::collection::vec(3.5f64..6.0, 5),
        phases in prop::collection::vec((0.5f64..2.0, 0.0f64..1.0, 1.0f64..8.0), 1..6),
    ) {
        let map = road();
        let p = IdmParams::default();
        let path = LanePath::new(&map, &[LaneId::new("road")]).unwrap();
        let (mut lx, mut lv) = (1000.0, v);
        let lead_len = lengths[0];
        let mut agents = Vec::new();
        let mut front_x = lx;
        let mut front_len = lead_len;
        for (i, g) in extra_gaps.iter().enumerate() {
            let len = lengths[i + 1];
            let gap = p.min_gap + v * p.time_headway + g;
            let x = front_x - front_len / 2.0 - gap - len / 2.0;
            agents.push(AgentRuntimeState {
                id: format!("f{i}"),
                category: AgentCategory::Vehicle,
                lane_path: path.clone(),
                arc_length: x,
                speed: v,
                length: len,
                width: 1.9,
                desired_speed: v,
            });
            front_x = x;
            front_len = len;
        }
        // Leader script: alternate braking at up to b and cruising.
        let mut script = Vec::new();
        for (brake_for, frac, cruise_for) in &phases {
            script.push((-p.comfort_decel * (0.2 + 0.8 * frac), *brake_for));
            script.push((p.max_accel * frac, *cruise_for));
        }
        let dt = 0.1;
        let mut t = 0.0;
        for step in 0..600 {
            let mut acc = 0.0;
            let mut acc_t = 0.0;
            for (a, d) in &script {
                if t >= acc_t && t < acc_t + d {
                    acc = *a;
                }
                acc_t += d;
            }
            let mut world = vec![body("lead", lx, lv, lead_len)];
            world.extend(agents.iter().map(|a| a.snapshot()));
            let next: Vec<_> = agents
                .iter()
                .map(|a| reactive_step(a, &world, &map, dt, &p).unwrap())
                .collect();
            agents = next;
            lv = (lv + acc * dt).clamp(0.0, 20.0);
            lx += lv * dt;
            t += dt;
            let mut fx = lx;
            let mut fl = lead_len;
            for a in &agents {
                let gap = fx - fl / 2.0 - (a.arc_length + a.length / 2.0);
                prop_assert!(gap > 0.0, "overlap at step {step}: gap {gap}");
                fx = a.arc_length;
                fl = a.length;
            }
        }
    }
}
