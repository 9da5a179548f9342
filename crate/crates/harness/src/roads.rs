//! Procedural maps: multi-lane roads, an on-ramp and a four-way intersection.

use planbench_core::geometry::{normalize_angle, Point2};
use planbench_core::map::LaneId;
use planbench_core::scenario::{LaneSpec, MapSpec, StopLineSpec};

pub const LANE_WIDTH: f64 = 3.5;
pub const SPEED_LIMIT: f64 = 15.0;
pub const TURN_SPEED_LIMIT: f64 = 8.0;
/// Half size of the square intersection box.
pub const BOX_HALF: f64 = 15.0;
/// Length of each intersection arm beyond the box.
pub const ARM_LENGTH: f64 = 130.0;
const SAMPLE_STEP: f64 = 1.0;
/// Paved margin beyond the outer lane edges of intersection arms.
pub const SHOULDER: f64 = 1.0;

pub fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn arr(points: &[Point2]) -> Vec<[f64; 2]> {
    points.iter().map(|q| [q.x, q.y]).collect()
}

fn lane(id: &str, points: &[Point2], speed_limit: f64) -> LaneSpec {
    LaneSpec {
        id: LaneId::new(id),
        centerline: arr(points),
        speed_limit,
        successors: vec![],
        left_neighbor: None,
        right_neighbor: None,
    }
}

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

#[derive(Debug, Clone, Copy)]
pub enum Segment {
    Straight(f64),
    /// Signed turn angle; positive turns left.
    Arc { radius: f64, angle: f64 },
}

/// Points and headings along a chain of segments, about one metre apart.
pub fn sample_segments(start: Point2, heading: f64, segments: &[Segment]) -> Vec<(Point2, f64)> {
    let mut out = vec![(start, heading)];
    let (mut pos, mut h) = (start, heading);
    for seg in segments {
        match *seg {
            Segment::Straight(len) => {
                let n = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
                let end = pos.add(Point2::new(h.cos(), h.sin()).scale(len));
                for k in 1..=n {
                    out.push((pos.lerp(end, k as f64 / n as f64), h));
                }
                pos = end;
            }
            Segment::Arc { radius, angle } => {
                let side = angle.signum();
                let center = pos.add(Point2::new(-h.sin(), h.cos()).scale(side * radius));
                let n = (radius * angle.abs() / SAMPLE_STEP).ceil().max(1.0) as usize;
                let phi0 = h - side * std::f64::consts::FRAC_PI_2;
                for k in 1..=n {
                    let phi = phi0 + angle * k as f64 / n as f64;
                    let q = center.add(Point2::new(phi.cos(), phi.sin()).scale(radius));
                    out.push((q, normalize_angle(h + angle * k as f64 / n as f64)));
                }
                h = normalize_angle(h + angle);
                pos = *out.last().map(|(q, _)| q).expect("non-empty");
            }
        }
    }
    out
}

/// Shifts a sampled path sideways; positive offsets go left.
pub fn offset(path: &[(Point2, f64)], d: f64) -> Vec<Point2> {
    path.iter()
        .map(|(q, h)| q.add(Point2::new(-h.sin(), h.cos()).scale(d)))
        .collect()
}

/// Lane ids of a road: forward lanes `f0..` (f0 rightmost) and backward lanes
/// `b0..` (b0 next to the forward lanes).
pub fn forward_id(k: usize) -> String {
    format!("f{k}")
}

pub fn backward_id(k: usize) -> String {
    format!("b{k}")
}

/// A road along `segments`. Forward lane `fk` follows the reference path at
/// left offset `k * LANE_WIDTH`; backward lanes lie further left and run the
/// other way.
pub fn road(start: Point2, heading: f64, segments: &[Segment], forward: usize, backward: usize) -> MapSpec {
    let path = sample_segments(start, heading, segments);
    let mut lanes = Vec::new();
    for k in 0..forward {
        let mut l = lane(&forward_id(k), &offset(&path, k as f64 * LANE_WIDTH), SPEED_LIMIT);
        if k + 1 < forward {
            l.left_neighbor = Some(LaneId::new(forward_id(k + 1)));
        }
        if k > 0 {
            l.right_neighbor = Some(LaneId::new(forward_id(k - 1)));
        }
        lanes.push(l);
    }
    for k in 0..backward {
        let mut pts = offset(&path, (forward + k) as f64 * LANE_WIDTH);
        pts.reverse();
        let mut l = lane(&backward_id(k), &pts, SPEED_LIMIT);
        // Backward traffic keeps to its own right, away from the forward lanes.
        if k > 0 {
            l.left_neighbor = Some(LaneId::new(backward_id(k - 1)));
        }
        if k + 1 < backward {
            l.right_neighbor = Some(LaneId::new(backward_id(k + 1)));
        }
        lanes.push(l);
    }
    let top = (forward + backward) as f64 * LANE_WIDTH - LANE_WIDTH / 2.0;
    let mut outline = offset(&path, -LANE_WIDTH / 2.0);
    let mut upper = offset(&path, top);
    upper.reverse();
    outline.extend(upper);
    MapSpec {
        lanes,
        driveable_area: vec![arr(&outline)],
        crosswalks: vec![],
        stop_lines: vec![],
    }
}

/// Straight road along +x from the origin.
pub fn straight_road(length: f64, forward: usize, backward: usize) -> MapSpec {
    road(p(0.0, 0.0), 0.0, &[Segment::Straight(length)], forward, backward)
}

/// Crosswalk strip across every lane of a straight road at `x`.
pub fn road_crosswalk(x: f64, width: f64, lanes: usize) -> Vec<[f64; 2]> {
    rect(x, -LANE_WIDTH / 2.0, x + width, lanes as f64 * LANE_WIDTH - LANE_WIDTH / 2.0)
}

/// Smooth 0..1 blend with zero slope and curvature at both ends.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Fixed layout of the on-ramp map.
pub mod ramp {
    pub const MAIN_SPLIT: f64 = 120.0;
    pub const AUX_END: f64 = 230.0;
    pub const MAIN_END: f64 = 420.0;
    pub const RAMP_START: f64 = 10.0;
    pub const RAMP_DROP: f64 = 20.0;
    pub const MAIN_START: f64 = -80.0;
}

pub fn ramp_curve(x: f64) -> f64 {
    use ramp::*;
    let u = (x - RAMP_START) / (MAIN_SPLIT - RAMP_START);
    -LANE_WIDTH - RAMP_DROP * (1.0 - smoothstep(u))
}

/// Single-lane main road with an on-ramp feeding an auxiliary lane on its
/// right. The auxiliary lane drops at [`ramp::AUX_END`]; vehicles must change
/// into the main lane before that.
pub fn ramp_map() -> MapSpec {
    use ramp::*;
    let w = LANE_WIDTH + SHOULDER;
    let line = |x0: f64, x1: f64, y: f64| -> Vec<Point2> {
        let n = ((x1 - x0) / SAMPLE_STEP).ceil() as usize;
        (0..=n).map(|k| p(x0 + (x1 - x0) * k as f64 / n as f64, y)).collect()
    };
    let ramp_pts: Vec<Point2> = {
        let n = (MAIN_SPLIT - RAMP_START).round() as usize;
        (0..=n)
            .map(|k| {
                let x = RAMP_START + k as f64;
                p(x, ramp_curve(x))
            })
            .collect()
    };
    let mut main_a = lane("main_a", &line(MAIN_START, MAIN_SPLIT, 0.0), SPEED_LIMIT);
    main_a.successors = vec![LaneId::new("main_b")];
    let mut main_b = lane("main_b", &line(MAIN_SPLIT, MAIN_END, 0.0), SPEED_LIMIT);
    main_b.right_neighbor = Some(LaneId::new("aux"));
    let mut on_ramp = lane("ramp", &ramp_pts, SPEED_LIMIT);
    on_ramp.successors = vec![LaneId::new("aux")];
    let mut aux = lane("aux", &line(MAIN_SPLIT, AUX_END, -w), SPEED_LIMIT);
    aux.left_neighbor = Some(LaneId::new("main_b"));

    // The ramp strip follows the curve; it overlaps the others where they meet.
    let mut ramp_outline: Vec<Point2> = ramp_pts.iter().map(|q| p(q.x, q.y - w / 2.0)).collect();
    ramp_outline.extend(ramp_pts.iter().rev().map(|q| p(q.x, q.y + w / 2.0)));
    MapSpec {
        lanes: vec![main_a, main_b, on_ramp, aux],
        driveable_area: vec![
            rect(MAIN_START, -w / 2.0, MAIN_END, w / 2.0),
            rect(MAIN_SPLIT - 1.0, -1.5 * w, AUX_END, -w / 2.0 + 0.25),
            arr(&ramp_outline),
        ],
        crosswalks: vec![],
        stop_lines: vec![],
    }
}

/// Approach names of the intersection, counter-clockwise from the south.
pub const APPROACHES: [&str; 4] = ["s", "e", "n", "w"];

fn rotate(q: Point2, quarter_turns: usize) -> Point2 {
    match quarter_turns % 4 {
        0 => q,
        1 => p(-q.y, q.x),
        2 => p(-q.x, -q.y),
        _ => p(q.y, -q.x),
    }
}

pub fn in_lane(a: usize) -> String {
    format!("{}_in", APPROACHES[a % 4])
}

pub fn out_lane(a: usize) -> String {
    format!("{}_out", APPROACHES[a % 4])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Straight,
    Left,
    Right,
}

impl Movement {
    pub fn exit(self, a: usize) -> usize {
        match self {
            Movement::Straight => (a + 2) % 4,
            Movement::Left => (a + 3) % 4,
            Movement::Right => (a + 1) % 4,
        }
    }
}

pub fn connector(a: usize, m: Movement) -> String {
    format!("{}_{}", APPROACHES[a % 4], APPROACHES[m.exit(a)])
}

/// Lane sequence through the intersection.
pub fn movement_lanes(a: usize, m: Movement) -> Vec<LaneId> {
    vec![LaneId::new(in_lane(a)), LaneId::new(connector(a, m)), LaneId::new(out_lane(m.exit(a)))]
}

/// Distance from the centre to the near edge of each crosswalk.
pub const CROSSWALK_NEAR: f64 = 16.0;
pub const CROSSWALK_WIDTH: f64 = 3.0;
/// Distance from the centre to each stop line.
pub const STOP_LINE_AT: f64 = 20.0;

pub fn crosswalk(a: usize) -> Vec<[f64; 2]> {
    let (x0, x1) = (-LANE_WIDTH, LANE_WIDTH);
    let (y0, y1) = (-CROSSWALK_NEAR - CROSSWALK_WIDTH, -CROSSWALK_NEAR);
    let corners = [p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1)];
    arr(&corners.map(|q| rotate(q, a)))
}

pub fn stop_line(a: usize) -> StopLineSpec {
    let s = rotate(p(0.0, -STOP_LINE_AT), a);
    let e = rotate(p(LANE_WIDTH, -STOP_LINE_AT), a);
    StopLineSpec {
        start: [s.x, s.y],
        end: [e.x, e.y],
        lane: LaneId::new(in_lane(a)),
    }
}

/// Four-way intersection of two-lane roads centred at the origin. Every
/// approach has an inbound and an outbound lane plus straight, left and right
/// connectors through the box.
pub fn intersection(stop_lines: &[usize], crosswalks: &[usize]) -> MapSpec {
    let h = LANE_WIDTH / 2.0;
    let far = BOX_HALF + ARM_LENGTH;
    let mut lanes = Vec::new();
    let line = |a: Point2, b: Point2| -> Vec<Point2> {
        let n = (a.dist(b) / SAMPLE_STEP).ceil() as usize;
        (0..=n).map(|k| a.lerp(b, k as f64 / n as f64)).collect()
    };
    let arc = |c: Point2, r: f64, from: f64, to: f64| -> Vec<Point2> {
        let n = (r * (to - from).abs() / SAMPLE_STEP).ceil() as usize;
        (0..=n)
            .map(|k| {
                let t = from + (to - from) * k as f64 / n as f64;
                c.add(p(t.cos(), t.sin()).scale(r))
            })
            .collect()
    };
    use std::f64::consts::{FRAC_PI_2, PI};
    for a in 0..4 {
        let rot = |pts: Vec<Point2>| pts.into_iter().map(|q| rotate(q, a)).collect::<Vec<_>>();
        let mut inbound = lane(&in_lane(a), &rot(line(p(h, -far), p(h, -BOX_HALF))), SPEED_LIMIT);
        inbound.successors = [Movement::Straight, Movement::Left, Movement::Right]
            .iter()
            .map(|&m| LaneId::new(connector(a, m)))
            .collect();
        lanes.push(inbound);
        lanes.push(lane(&out_lane(a), &rot(line(p(-h, -BOX_HALF), p(-h, -far))), SPEED_LIMIT));
        let shapes = [
            (Movement::Straight, line(p(h, -BOX_HALF), p(h, BOX_HALF)), SPEED_LIMIT),
            (
                Movement::Left,
                arc(p(-BOX_HALF, -BOX_HALF), BOX_HALF + h, 0.0, FRAC_PI_2),
                TURN_SPEED_LIMIT,
            ),
            (
                Movement::Right,
                arc(p(BOX_HALF, -BOX_HALF), BOX_HALF - h, PI, FRAC_PI_2),
                TURN_SPEED_LIMIT,
            ),
        ];
        for (m, pts, limit) in shapes {
            let mut c = lane(&connector(a, m), &rot(pts), limit);
            c.successors = vec![LaneId::new(out_lane(m.exit(a)))];
            lanes.push(c);
        }
    }
    let w = LANE_WIDTH + SHOULDER;
    let quarter = [p(-w, -far), p(w, -far), p(w, -BOX_HALF), p(BOX_HALF, -BOX_HALF), p(BOX_HALF, -w)];
    let outline: Vec<Point2> = (0..4).flat_map(|a| quarter.map(|q| rotate(q, a))).collect();
    MapSpec {
        lanes,
        driveable_area: vec![arr(&outline)],
        crosswalks: crosswalks.iter().map(|&a| crosswalk(a)).collect(),
        stop_lines: stop_lines.iter().map(|&a| stop_line(a)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_maps_build() {
        straight_road(300.0, 4, 4).build().unwrap();
        road(p(0.0, 0.0), 0.0, &[Segment::Straight(30.0), Segment::Arc { radius: 40.0, angle: 1.5 }], 2, 0)
            .build()
            .unwrap();
        ramp_map().build().unwrap();
        intersection(&[0, 1, 2, 3], &[0, 1, 2, 3]).build().unwrap();
    }

    #[test]
    fn arc_samples_stay_on_the_circle() {
        let pts = sample_segments(p(0.0, 0.0), 0.0, &[Segment::Arc { radius: 40.0, angle: -1.0 }]);
        for (q, _) in &pts {
            assert!((q.dist(p(0.0, -40.0)) - 40.0).abs() < 1e-9);
        }
        assert!((pts.last().unwrap().1 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn connectors_join_the_arms() {
        let spec = intersection(&[], &[]);
        let find = |id: String| spec.lanes.iter().find(|l| l.id.as_str() == id).unwrap();
        for a in 0..4 {
            let end = *find(in_lane(a)).centerline.last().unwrap();
            for m in [Movement::Straight, Movement::Left, Movement::Right] {
                let c = find(connector(a, m));
                let start = c.centerline[0];
                assert!((start[0] - end[0]).hypot(start[1] - end[1]) < 1e-9);
                let out = find(out_lane(m.exit(a))).centerline[0];
                let last = c.centerline.last().unwrap();
                assert!((out[0] - last[0]).hypot(out[1] - last[1]) < 1e-9);
            }
        }
    }
}
