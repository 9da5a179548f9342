mod common;

use common::oracles::*;
use planbench_core::geometry::{box_overlap, ObjectSnapshot, Point2, Pose2D, Trajectory, TrajectorySample};
use planbench_core::metrics::{similarity_metrics, ttc_pair, TTC_HORIZON};
use planbench_core::scenario::RigidTransform;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ttc_matches_a_fine_grid_rollout() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut hits, mut worst) = (0, 0.0f64);
    for i in 0..1000 {
        let (a, b) = if i % 2 == 0 {
            random_encounter(&mut rng)
        } else {
            (random_body(&mut rng, "a"), random_body(&mut rng, "b"))
        };
        let fast = ttc_pair(&a, &b, TTC_HORIZON);
        let brute = brute_ttc(&a, &b, TTC_HORIZON, 1e-4);
        match (fast, brute) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                hits += 1;
                worst = worst.max((x - y).abs());
                assert!((x - y).abs() <= 2e-3, "config {i}: {x} vs {y}");
            }
            _ => panic!("config {i}: {fast:?} vs {brute:?}"),
        }
    }
    assert!(hits > 200, "too few conflicts ({hits}) to be a meaningful check");
    assert!(worst <= 2e-3);
}

#[test]
fn box_overlap_matches_clipping_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut checked, mut overlapping) = (0, 0);
    for i in 0..10_000 {
        let a = random_box(&mut rng, 3.0);
        let b = random_box(&mut rng, 3.0);
        let area = clip_area(&a.corners(), &b.corners());
        let gap = outline_distance(&a, &b);
        let inside_either = a.contains(b.center.position()) || b.contains(a.center.position());
        // Pairs whose outlines come within 1e-6 m without clear area overlap
        // are ambiguous to the oracle.
        if gap < 1e-6 && area < 1e-6 && !inside_either {
            continue;
        }
        checked += 1;
        let expected = area > 0.0 || inside_either;
        assert_eq!(box_overlap(&a, &b), expected, "pair {i}: area {area}, gap {gap}");
        if expected {
            overlapping += 1;
            if area > 0.05 {
                let frac = monte_carlo_overlap(&mut rng, &a, &b, 2000);
                let want = area / (4.0 * a.half_length * a.half_width);
                assert!((frac - want).abs() < 0.05, "pair {i}: sampled {frac} vs {want}");
            }
        }
    }
    assert!(checked > 9_900);
    assert!(overlapping > 1000 && overlapping < checked - 1000);
}

fn moved(o: &ObjectSnapshot, tf: &RigidTransform) -> ObjectSnapshot {
    let p = tf.apply(o.pose.position());
    ObjectSnapshot {
        pose: Pose2D::new(p.x, p.y, tf.heading(o.pose.heading)),
        velocity: tf.apply_vector(o.velocity),
        ..o.clone()
    }
}

fn body(x: f64, y: f64, h: f64, vx: f64, vy: f64) -> ObjectSnapshot {
    ObjectSnapshot {
        id: "b".into(),
        category: planbench_core::geometry::AgentCategory::Vehicle,
        pose: Pose2D::new(x, y, h),
        velocity: Point2::new(vx, vy),
        length: 4.6,
        width: 1.9,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ttc_is_symmetric(
        ax in -20.0..20.0f64, ay in -20.0..20.0f64, ah in -3.1..3.1f64, avx in -15.0..15.0f64, avy in -15.0..15.0f64,
        bx in -20.0..20.0f64, by in -20.0..20.0f64, bh in -3.1..3.1f64, bvx in -15.0..15.0f64, bvy in -15.0..15.0f64,
    ) {
        let a = body(ax, ay, ah, avx, avy);
        let b = body(bx, by, bh, bvx, bvy);
        prop_assert_eq!(ttc_pair(&a, &b, TTC_HORIZON), ttc_pair(&b, &a, TTC_HORIZON));
        prop_assert_eq!(box_overlap(&a.footprint(), &b.footprint()), box_overlap(&b.footprint(), &a.footprint()));
    }

    #[test]
    fn ttc_is_invariant_under_rigid_motion(
        ax in -20.0..20.0f64, ay in -20.0..20.0f64, ah in -3.1..3.1f64, avx in -15.0..15.0f64, avy in -15.0..15.0f64,
        bx in -20.0..20.0f64, by in -20.0..20.0f64, bh in -3.1..3.1f64, bvx in -15.0..15.0f64, bvy in -15.0..15.0f64,
        theta in -3.1..3.1f64, tx in -500.0..500.0f64, ty in -500.0..500.0f64, mirror: bool,
    ) {
        let a = body(ax, ay, ah, avx, avy);
        let b = body(bx, by, bh, bvx, bvy);
        let tf = RigidTransform { theta, tx, ty, mirror };
        let (a2, b2) = (moved(&a, &tf), moved(&b, &tf));
        let before = ttc_pair(&a, &b, TTC_HORIZON);
        let after = ttc_pair(&a2, &b2, TTC_HORIZON);
        match (before, after) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 2e-3, "{} vs {}", x, y),
            (None, None) => {}
            (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
        }
    }

    #[test]
    fn similarity_of_a_trajectory_with_itself_is_perfect(
        v0 in 0.0..15.0f64, accel in -1.5..1.5f64, curvature in -0.05..0.05f64, stop_at in 0usize..150,
    ) {
        let mut samples = Vec::new();
        let (mut x, mut y, mut h, mut v) = (0.0f64, 0.0f64, 0.0f64, v0);
        for i in 0..=150usize {
            if i >= stop_at && i < stop_at + 20 {
                v = 0.0;
            }
            samples.push(TrajectorySample { time: i as f64 * 0.1, pose: Pose2D::new(x, y, h), velocity: Some(v) });
            x += v * h.cos() * 0.1;
            y += v * h.sin() * 0.1;
            h += v * curvature * 0.1;
            v = (v + accel * 0.1).clamp(0.0, 15.0);
        }
        let t = Trajectory::new(samples).unwrap();
        let m = similarity_metrics(&t, &t);
        for n in ["long_vel_err", "lat_pos_err", "lat_pos_err_max"] {
            prop_assert_eq!(m.value(n), Some(0.0), "{}", n);
        }
        prop_assert!(matches!(m.value("stop_pos_err"), None | Some(0.0)));
        prop_assert_eq!(m.value("jerk_ratio"), Some(1.0));
        prop_assert_eq!(m.value("accel_ratio"), Some(1.0));
    }
}
