//! Independent reference computations used to check the library.

#![allow(dead_code)]

use planbench_core::geometry::{box_overlap, segment_distance, AgentCategory, ObjectSnapshot, OrientedBox, Point2, Pose2D};
use rand::Rng;

/// First time on a `step` grid at which the constant-velocity footprints overlap.
pub fn brute_ttc(a: &ObjectSnapshot, b: &ObjectSnapshot, horizon: f64, step: f64) -> Option<f64> {
    let (fa, fb) = (a.footprint(), b.footprint());
    let n = (horizon / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).find(|&t| {
        box_overlap(&fa.translated(a.velocity.scale(t)), &fb.translated(b.velocity.scale(t)))
    })
}

pub fn random_body<R: Rng>(rng: &mut R, id: &str) -> ObjectSnapshot {
    let h = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let speed = rng.gen_range(0.0..15.0);
    let dir = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    ObjectSnapshot {
        id: id.into(),
        category: AgentCategory::Vehicle,
        pose: Pose2D::new(rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0), h),
        velocity: Point2::new(speed * dir.cos(), speed * dir.sin()),
        length: rng.gen_range(0.5..6.0),
        width: rng.gen_range(0.5..2.5),
    }
}

pub fn random_box<R: Rng>(rng: &mut R, spread: f64) -> OrientedBox {
    OrientedBox::new(
        Pose2D::new(
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        ),
        rng.gen_range(0.2..3.0),
        rng.gen_range(0.1..1.5),
    )
}

fn inside(p: Point2, a: Point2, b: Point2) -> bool {
    b.sub(a).cross(p.sub(a)) >= 0.0
}

fn line_cross(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let r = q.sub(p);
    let s = b.sub(a);
    let t = a.sub(p).cross(s) / r.cross(s);
    p.add(r.scale(t))
}

/// Area of the intersection of two convex counter-clockwise polygons,
/// by Sutherland-Hodgman clipping.
pub fn clip_area(subject: &[Point2], clip: &[Point2]) -> f64 {
    let mut out: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            match (inside(p, a, b), inside(q, a, b)) {
                (true, true) => out.push(q),
                (true, false) => out.push(line_cross(p, q, a, b)),
                (false, true) => {
                    out.push(line_cross(p, q, a, b));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    let n = out.len();
    (0..n).map(|i| out[i].cross(out[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

/// Smallest distance between the outlines of two boxes.
pub fn outline_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let mut d = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            d = d.min(segment_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]));
        }
    }
    d
}

/// Fraction of `n` uniform samples of box `a` that fall inside `b`.
pub fn monte_carlo_overlap<R: Rng>(rng: &mut R, a: &OrientedBox, b: &OrientedBox, n: usize) -> f64 {
    let mut hits = 0;
    for _ in 0..n {
        let p = a.center.offset(
            rng.gen_range(-a.half_length..=a.half_length),
            rng.gen_range(-a.half_width..=a.half_width),
        );
        let l = b.center.to_local(p);
        if l.x.abs() <= b.half_length && l.y.abs() <= b.half_width {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Two bodies where the second heads roughly at the first, so that about
/// half the pairs meet within a few seconds.
pub fn random_encounter<R: Rng>(rng: &mut R) -> (ObjectSnapshot, ObjectSnapshot) {
    let a = random_body(rng, "a");
    let mut b = random_body(rng, "b");
    let bearing = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let range = rng.gen_range(3.0..40.0);
    b.pose = Pose2D::new(a.pose.x + range * bearing.cos(), a.pose.y + range * bearing.sin(), b.pose.heading);
    let aim = bearing + std::f64::consts::PI + rng.gen_range(-0.4..0.4);
    let closing = rng.gen_range(1.0..20.0);
    b.velocity = a.velocity.add(Point2::new(closing * aim.cos(), closing * aim.sin()));
    (a, b)
}
