//! Semantic map: lane graph, driveable area, crosswalks and stop lines,
//! with a uniform grid index for spatial queries.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ValidationError;
use crate::geometry::{
    point_segment_projection, segments_intersect, EgoState, ObjectSnapshot, OrientedBox, Point2,
    Pose2D,
};

/// Lateral distance within which an object counts as being on a lane.
pub const SAME_LANE_GATE: f64 = 1.0;
/// Routing cost of one lateral move to a neighbor lane, in meters.
pub const NEIGHBOR_CHANGE_COST: f64 = 5.0;
const GRID_CELL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub String);

impl LaneId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LaneId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid map: {0}")]
    Invalid(#[from] ValidationError),
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("no route from lane {from} to lane {to}")]
    RouteNotFound { from: LaneId, to: LaneId },
    #[error("lanes {0} and {1} are not connected")]
    Disconnected(LaneId, LaneId),
}

/// Arc-length parameterized polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

/// Closest-point projection onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    pub arc_length: f64,
    /// Signed, positive to the left of the direction of travel.
    pub lateral_offset: f64,
    pub distance: f64,
    pub segment: usize,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self, ValidationError> {
        if points.len() < 2 {
            return Err(ValidationError::new("polyline needs at least two points"));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ValidationError::new("polyline has non-finite points"));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(ValidationError::new("polyline has repeated consecutive points"));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut s = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            s += w[0].dist(w[1]);
            cumulative.push(s);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    pub fn project_on_segment(&self, p: Point2, i: usize) -> PolylineProjection {
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (distance, t) = point_segment_projection(p, a, b);
        let dir = b.sub(a);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let foot = a.lerp(b, t);
        let lateral = dir.cross(p.sub(foot)) / len;
        let arc_length = if t == 1.0 {
            self.cumulative[i + 1]
        } else {
            self.cumulative[i] + t * len
        };
        PolylineProjection {
            arc_length,
            lateral_offset: lateral,
            distance,
            segment: i,
        }
    }

    pub fn project(&self, p: Point2) -> PolylineProjection {
        let mut best = self.project_on_segment(p, 0);
        for i in 1..self.segment_count() {
            let cand = self.project_on_segment(p, i);
            if cand.distance < best.distance {
                best = cand;
            }
        }
        best
    }

    /// Position and tangent heading at arc length `s`, clamped to the polyline.
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let s = s.clamp(0.0, self.length());
        let i = self
            .cumulative
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(self.segment_count() - 1);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = ((s - self.cumulative[i]) / len).clamp(0.0, 1.0);
        let p = a.lerp(b, t);
        let d = b.sub(a);
        Pose2D::new(p.x, p.y, d.y.atan2(d.x))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.pose_at(s).heading
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Polyline,
    pub speed_limit: f64,
    pub successors: Vec<LaneId>,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn is_neighbor(&self, other: &LaneId) -> bool {
        self.left_neighbor.as_ref() == Some(other) || self.right_neighbor.as_ref() == Some(other)
    }
}

/// Simple polygon tested with the even-odd rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    points: Vec<Point2>,
}

impl Polygon {
    pub fn new(points: Vec<Point2>) -> Result<Self, ValidationError> {
        if points.len() < 3 {
            return Err(ValidationError::new("polygon needs at least three vertices"));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ValidationError::new("polygon has non-finite vertices"));
        }
        let poly = Self { points };
        if !poly.is_simple() {
            return Err(ValidationError::new("polygon is self-intersecting"));
        }
        Ok(poly)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    fn is_simple(&self) -> bool {
        let n = self.points.len();
        for i in 0..n {
            let (a0, a1) = (self.points[i], self.points[(i + 1) % n]);
            if a0 == a1 {
                return false;
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (b0, b1) = (self.points[j], self.points[(j + 1) % n]);
                if segments_intersect(a0, a1, b0, b1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        let n = self.points.len();
        let mut j = n - 1;
        for i in 0..n {
            let (pi, pj) = (self.points[i], self.points[j]);
            if (pi.y > p.y) != (pj.y > p.y) {
                let x_cross = (pj.x - pi.x) * (p.y - pi.y) / (pj.y - pi.y) + pi.x;
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// True when the box and polygon share any point.
    pub fn intersects_box(&self, b: &OrientedBox) -> bool {
        let corners = b.corners();
        if corners.iter().any(|&c| self.contains(c)) {
            return true;
        }
        if self.points.iter().any(|&p| b.contains(p)) {
            return true;
        }
        self.edges().any(|(p0, p1)| {
            (0..4).any(|k| segments_intersect(p0, p1, corners[k], corners[(k + 1) % 4]))
        })
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::from_points(&self.points)
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len() as f64;
        let s = self.points.iter().fold(Point2::new(0.0, 0.0), |acc, p| acc.add(*p));
        s.scale(1.0 / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopLine {
    pub start: Point2,
    pub end: Point2,
    pub lane_id: LaneId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn from_points(points: &[Point2]) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn union(&self, other: &Bounds) -> Bounds {
        Bounds {
            min: Point2::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            max: Point2::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        }
    }

    pub fn expanded(&self, margin: f64) -> Bounds {
        Bounds {
            min: Point2::new(self.min.x - margin, self.min.y - margin),
            max: Point2::new(self.max.x + margin, self.max.y + margin),
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

type Cell = (i64, i64);

fn cell_of(p: Point2) -> Cell {
    ((p.x / GRID_CELL).floor() as i64, (p.y / GRID_CELL).floor() as i64)
}

fn cells_covering(b: &Bounds) -> impl Iterator<Item = Cell> {
    let (x0, y0) = cell_of(b.min);
    let (x1, y1) = cell_of(b.max);
    (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| (x, y)))
}

#[derive(Debug, Clone, Default, PartialEq)]
struct GridIndex {
    lane_segments: HashMap<Cell, Vec<(usize, usize)>>,
    driveable: HashMap<Cell, Vec<usize>>,
    min_cell: Cell,
    max_cell: Cell,
}

/// Result of projecting a point onto the nearest lane.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneProjection {
    pub lane_id: LaneId,
    pub arc_length: f64,
    pub lateral_offset: f64,
    pub distance: f64,
}

/// Immutable semantic map. Lanes are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    lanes: Vec<Lane>,
    lane_index: BTreeMap<LaneId, usize>,
    predecessors: BTreeMap<LaneId, Vec<LaneId>>,
    driveable_area: Vec<Polygon>,
    crosswalks: Vec<Polygon>,
    stop_lines: Vec<StopLine>,
    bounds: Bounds,
    grid: GridIndex,
}

impl SemanticMap {
    pub fn new(
        mut lanes: Vec<Lane>,
        driveable_area: Vec<Polygon>,
        crosswalks: Vec<Polygon>,
        stop_lines: Vec<StopLine>,
    ) -> Result<Self, MapError> {
        if lanes.is_empty() {
            return Err(ValidationError::new("map needs at least one lane").into());
        }
        lanes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut lane_index = BTreeMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            if lane_index.insert(lane.id.clone(), i).is_some() {
                return Err(ValidationError::new(format!("duplicate lane id {}", lane.id)).into());
            }
            if !(lane.speed_limit > 0.0 && lane.speed_limit.is_finite()) {
                return Err(ValidationError::new(format!("lane {} speed limit", lane.id)).into());
            }
        }
        let mut predecessors: BTreeMap<LaneId, Vec<LaneId>> = BTreeMap::new();
        for lane in &lanes {
            let refs = lane
                .successors
                .iter()
                .chain(lane.left_neighbor.iter())
                .chain(lane.right_neighbor.iter());
            for r in refs {
                if !lane_index.contains_key(r) {
                    return Err(MapError::UnknownLane(r.clone()));
                }
            }
            for s in &lane.successors {
                predecessors.entry(s.clone()).or_default().push(lane.id.clone());
            }
        }
        for sl in &stop_lines {
            if !lane_index.contains_key(&sl.lane_id) {
                return Err(MapError::UnknownLane(sl.lane_id.clone()));
            }
        }
        let mut bounds = Bounds::from_points(lanes[0].centerline.points());
        for lane in &lanes {
            bounds = bounds.union(&Bounds::from_points(lane.centerline.points()));
        }
        for poly in driveable_area.iter().chain(&crosswalks) {
            bounds = bounds.union(&poly.bounds());
        }

        let mut grid = GridIndex {
            min_cell: cell_of(bounds.min),
            max_cell: cell_of(bounds.max),
            ..GridIndex::default()
        };
        for (li, lane) in lanes.iter().enumerate() {
            let pts = lane.centerline.points();
            for si in 0..lane.centerline.segment_count() {
                let b = Bounds::from_points(&pts[si..si + 2]);
                for c in cells_covering(&b) {
                    grid.lane_segments.entry(c).or_default().push((li, si));
                }
            }
        }
        for (pi, poly) in driveable_area.iter().enumerate() {
            for c in cells_covering(&poly.bounds()) {
                grid.driveable.entry(c).or_default().push(pi);
            }
        }

        Ok(Self {
            lanes,
            lane_index,
            predecessors,
            driveable_area,
            crosswalks,
            stop_lines,
            bounds,
            grid,
        })
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: &LaneId) -> Result<&Lane, MapError> {
        self.lane_index
            .get(id)
            .map(|&i| &self.lanes[i])
            .ok_or_else(|| MapError::UnknownLane(id.clone()))
    }

    pub fn predecessors(&self, id: &LaneId) -> &[LaneId] {
        self.predecessors.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn driveable_area(&self) -> &[Polygon] {
        &self.driveable_area
    }

    pub fn crosswalks(&self) -> &[Polygon] {
        &self.crosswalks
    }

    pub fn stop_lines(&self) -> &[StopLine] {
        &self.stop_lines
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Closest lane by Euclidean distance to the centerline; ties go to the
    /// lexicographically smallest lane id.
    pub fn nearest_lane(&self, p: Point2) -> LaneProjection {
        self.nearest_lane_where(p, |_, _| true)
            .expect("map has at least one lane")
    }

    /// Like [`nearest_lane`](Self::nearest_lane) but prefers lanes whose
    /// direction at the projection is within 90° of `heading`.
    pub fn nearest_aligned_lane(&self, p: Point2, heading: f64) -> LaneProjection {
        self.nearest_lane_where(p, |lane, proj| {
            let h = lane.centerline.heading_at(proj.arc_length);
            (h - heading).cos() > 0.0
        })
        .unwrap_or_else(|| self.nearest_lane(p))
    }

    /// Exact nearest-lane search over expanding rings of grid cells.
    pub fn nearest_lane_where(
        &self,
        p: Point2,
        accept: impl Fn(&Lane, &PolylineProjection) -> bool,
    ) -> Option<LaneProjection> {
        let center = cell_of(p);
        let g = &self.grid;
        let r_max = [
            (center.0 - g.min_cell.0).abs(),
            (center.0 - g.max_cell.0).abs(),
            (center.1 - g.min_cell.1).abs(),
            (center.1 - g.max_cell.1).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let mut best: Option<(f64, usize, PolylineProjection)> = None;
        let consider = |li: usize, si: usize, best: &mut Option<(f64, usize, PolylineProjection)>| {
            let lane = &self.lanes[li];
            let proj = lane.centerline.project_on_segment(p, si);
            if !accept(lane, &proj) {
                return;
            }
            let better = match best {
                None => true,
                Some((d, bl, _)) => proj.distance < *d || (proj.distance == *d && li < *bl),
            };
            if better {
                *best = Some((proj.distance, li, proj));
            }
        };
        for r in 0..=r_max {
            for c in ring_cells(center, r) {
                if let Some(entries) = g.lane_segments.get(&c) {
                    for &(li, si) in entries {
                        consider(li, si, &mut best);
                    }
                }
            }
            if let Some((d, _, _)) = best {
                if d <= r as f64 * GRID_CELL {
                    break;
                }
            }
        }
        best.map(|(_, li, proj)| LaneProjection {
            lane_id: self.lanes[li].id.clone(),
            arc_length: proj.arc_length,
            lateral_offset: proj.lateral_offset,
            distance: proj.distance,
        })
    }

    pub fn point_in_driveable_area(&self, p: Point2) -> bool {
        self.grid
            .driveable
            .get(&cell_of(p))
            .is_some_and(|ids| ids.iter().any(|&i| self.driveable_area[i].contains(p)))
    }

    /// All four footprint corners must lie in the driveable area.
    pub fn in_driveable_area(&self, b: &OrientedBox) -> bool {
        b.corners().iter().all(|&c| self.point_in_driveable_area(c))
    }

    pub fn on_crosswalk(&self, p: Point2) -> bool {
        self.crosswalks.iter().any(|c| c.contains(p))
    }

    pub fn lane_path(&self, lanes: &[LaneId]) -> Result<LanePath, MapError> {
        LanePath::new(self, lanes)
    }

    /// Minimum-cost lane sequence from `start` to `goal`.
    ///
    /// Successor moves cost the length of the lane being left; moves to a
    /// lateral neighbor cost [`NEIGHBOR_CHANGE_COST`] and keep the arc length.
    pub fn plan_route(&self, start: &Pose2D, goal: &Pose2D) -> Result<Route, MapError> {
        let sp = self.nearest_aligned_lane(start.position(), start.heading);
        let gp = self.nearest_aligned_lane(goal.position(), goal.heading);

        #[derive(PartialEq)]
        struct Entry {
            cost: f64,
            path: Vec<LaneId>,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                // Min-heap on (cost, path).
                other
                    .cost
                    .total_cmp(&self.cost)
                    .then_with(|| other.path.cmp(&self.path))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        // Same-lane goal ahead of the start needs no search.
        if sp.lane_id == gp.lane_id && gp.arc_length > sp.arc_length {
            return Route::new(self, vec![sp.lane_id.clone()], start, goal, sp.arc_length, gp.arc_length);
        }

        // `cost` is the offset of the lane's arc-length origin plus neighbor penalties.
        let mut heap = BinaryHeap::new();
        let mut settled: BTreeSet<LaneId> = BTreeSet::new();
        let start_lane = self.lane(&sp.lane_id)?;
        // The start lane itself is expanded once without being settled, so
        // a loop can return to it when the goal lies behind the start.
        let push_neighbors = |heap: &mut BinaryHeap<Entry>, lane: &Lane, cost: f64, path: &[LaneId]| {
            for s in &lane.successors {
                let mut p = path.to_vec();
                p.push(s.clone());
                heap.push(Entry {
                    cost: cost + lane.length(),
                    path: p,
                });
            }
            for n in lane.left_neighbor.iter().chain(lane.right_neighbor.iter()) {
                let mut p = path.to_vec();
                p.push(n.clone());
                heap.push(Entry {
                    cost: cost + NEIGHBOR_CHANGE_COST,
                    path: p,
                });
            }
        };
        push_neighbors(&mut heap, start_lane, 0.0, std::slice::from_ref(&sp.lane_id));
        while let Some(Entry { cost, path }) = heap.pop() {
            let lane_id = path.last().expect("non-empty path").clone();
            if !settled.insert(lane_id.clone()) {
                continue;
            }
            if lane_id == gp.lane_id {
                let route = Route::new(self, path, start, goal, sp.arc_length, gp.arc_length)?;
                if route.total_length > 0.0 {
                    return Ok(route);
                }
                // Zero or negative length means the goal is behind on a parallel lane.
                continue;
            }
            let lane = self.lane(&lane_id)?;
            push_neighbors(&mut heap, lane, cost, &path);
        }
        Err(MapError::RouteNotFound {
            from: sp.lane_id,
            to: gp.lane_id,
        })
    }

    /// Nearest object ahead of the ego on `lane_path`, with its bumper gap.
    pub fn lead_agent(
        &self,
        lane_path: &[LaneId],
        ego: &EgoState,
        agents: &[ObjectSnapshot],
    ) -> Result<Option<(String, f64)>, MapError> {
        let path = self.lane_path(lane_path)?;
        Ok(path.lead_object(ego.center(), ego.dims.length / 2.0, agents))
    }
}

fn ring_cells(center: Cell, r: i64) -> Vec<Cell> {
    if r == 0 {
        return vec![center];
    }
    let mut out = Vec::with_capacity((8 * r) as usize);
    for dx in -r..=r {
        out.push((center.0 + dx, center.1 - r));
        out.push((center.0 + dx, center.1 + r));
    }
    for dy in -r + 1..r {
        out.push((center.0 - r, center.1 + dy));
        out.push((center.0 + r, center.1 + dy));
    }
    out
}

/// How a lane in a path was entered from the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneTransition {
    Start,
    Successor,
    Neighbor,
}

/// A connected sequence of lanes with a shared longitudinal coordinate.
///
/// Successor moves continue the coordinate past the previous lane's end;
/// neighbor moves keep the same coordinate origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LanePath {
    lanes: Vec<Lane>,
    offsets: Vec<f64>,
    transitions: Vec<LaneTransition>,
}

/// Projection onto a lane path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub index: usize,
    /// Longitudinal coordinate along the whole path.
    pub s: f64,
    pub lateral_offset: f64,
    pub distance: f64,
}

impl LanePath {
    pub fn new(map: &SemanticMap, ids: &[LaneId]) -> Result<Self, MapError> {
        if ids.is_empty() {
            return Err(ValidationError::new("lane path is empty").into());
        }
        let mut lanes = Vec::with_capacity(ids.len());
        let mut offsets = Vec::with_capacity(ids.len());
        let mut transitions = Vec::with_capacity(ids.len());
        let first = map.lane(&ids[0])?.clone();
        offsets.push(0.0);
        transitions.push(LaneTransition::Start);
        lanes.push(first);
        for id in &ids[1..] {
            let prev = lanes.last().expect("non-empty");
            let lane = map.lane(id)?;
            let prev_offset = *offsets.last().expect("non-empty");
            if prev.successors.contains(id) {
                offsets.push(prev_offset + prev.length());
                transitions.push(LaneTransition::Successor);
            } else if prev.is_neighbor(id) {
                offsets.push(prev_offset);
                transitions.push(LaneTransition::Neighbor);
            } else {
                return Err(MapError::Disconnected(prev.id.clone(), id.clone()));
            }
            lanes.push(lane.clone());
        }
        Ok(Self {
            lanes,
            offsets,
            transitions,
        })
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane_ids(&self) -> Vec<LaneId> {
        self.lanes.iter().map(|l| l.id.clone()).collect()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn transitions(&self) -> &[LaneTransition] {
        &self.transitions
    }

    pub fn last_lane(&self) -> &Lane {
        self.lanes.last().expect("non-empty")
    }

    pub fn end_s(&self) -> f64 {
        self.offsets[self.lanes.len() - 1] + self.last_lane().length()
    }

    pub fn start_s(&self) -> f64 {
        0.0
    }

    pub fn push(&mut self, map: &SemanticMap, id: &LaneId) -> Result<(), MapError> {
        let mut ids = self.lane_ids();
        ids.push(id.clone());
        *self = LanePath::new(map, &ids)?;
        Ok(())
    }

    pub fn project(&self, p: Point2) -> PathProjection {
        let mut best: Option<PathProjection> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            let proj = lane.centerline.project(p);
            if best.is_none_or(|b| proj.distance < b.distance) {
                best = Some(PathProjection {
                    index: i,
                    s: self.offsets[i] + proj.arc_length,
                    lateral_offset: proj.lateral_offset,
                    distance: proj.distance,
                });
            }
        }
        best.expect("non-empty path")
    }

    /// Pose on the centerline at coordinate `s`, using the last lane that covers it.
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let mut idx = 0;
        for i in 0..self.lanes.len() {
            if self.offsets[i] <= s {
                idx = i;
            }
        }
        self.lanes[idx].centerline.pose_at(s - self.offsets[idx])
    }

    /// Nearest object ahead of a body at `center`, gated laterally by
    /// [`SAME_LANE_GATE`]. The gap subtracts both half-lengths.
    pub fn lead_object(
        &self,
        center: Point2,
        half_length: f64,
        objects: &[ObjectSnapshot],
    ) -> Option<(String, f64)> {
        self.nearest_along(center, half_length, objects, true)
    }

    /// Nearest object behind a body at `center`, same gating as [`lead_object`](Self::lead_object).
    pub fn rear_object(
        &self,
        center: Point2,
        half_length: f64,
        objects: &[ObjectSnapshot],
    ) -> Option<(String, f64)> {
        self.nearest_along(center, half_length, objects, false)
    }

    fn nearest_along(
        &self,
        center: Point2,
        half_length: f64,
        objects: &[ObjectSnapshot],
        ahead: bool,
    ) -> Option<(String, f64)> {
        let own = self.project(center);
        let mut best: Option<(f64, &ObjectSnapshot)> = None;
        for obj in objects {
            let proj = self.project(obj.pose.position());
            if proj.distance > SAME_LANE_GATE {
                continue;
            }
            let ds = if ahead { proj.s - own.s } else { own.s - proj.s };
            if ds <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((d, b)) => ds < d || (ds == d && obj.id < b.id),
            };
            if better {
                best = Some((ds, obj));
            }
        }
        best.map(|(ds, obj)| (obj.id.clone(), ds - half_length - obj.length / 2.0))
    }
}

/// Lane sequence from a start pose to a goal waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub path: LanePath,
    pub start_s: f64,
    pub goal_s: f64,
    pub total_length: f64,
    pub goal: Pose2D,
}

impl Route {
    fn new(
        map: &SemanticMap,
        lanes: Vec<LaneId>,
        _start: &Pose2D,
        goal: &Pose2D,
        start_arc: f64,
        goal_arc: f64,
    ) -> Result<Self, MapError> {
        let path = LanePath::new(map, &lanes)?;
        let goal_s = path.offsets[path.lanes.len() - 1] + goal_arc;
        Ok(Self {
            start_s: start_arc,
            goal_s,
            total_length: goal_s - start_arc,
            goal: *goal,
            path,
        })
    }

    /// Rebuilds a route over an explicit lane list, as sent to external planners.
    pub fn from_lanes(map: &SemanticMap, lanes: &[LaneId], start: &Pose2D, goal: &Pose2D) -> Result<Self, MapError> {
        let path = LanePath::new(map, lanes)?;
        let start_arc = path.lanes[0].centerline.project(start.position()).arc_length;
        let goal_arc = path.last_lane().centerline.project(goal.position()).arc_length;
        Self::new(map, lanes.to_vec(), start, goal, start_arc, goal_arc)
    }

    pub fn lane_ids(&self) -> Vec<LaneId> {
        self.path.lane_ids()
    }

    /// Fraction of the route covered at `p`, clamped to `[0, 1]`.
    pub fn progress(&self, p: Point2) -> f64 {
        if self.total_length <= 0.0 {
            return 1.0;
        }
        let proj = self.path.project(p);
        ((proj.s - self.start_s) / self.total_length).clamp(0.0, 1.0)
    }
}

/// Free-function form of [`Route::progress`].
pub fn route_progress(route: &Route, p: Point2) -> f64 {
    route.progress(p)
}
