//! Immutable 2D world model: labeled room polygons, doors, disc-shaped
//! furniture, ray-based range sensing, navigability and a grid shortest-path
//! oracle.
//!
//! Headings are degrees counterclockwise from +x, normalized to [0, 360).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    is_simple_polygon, normalize_deg, on_polygon_boundary, point_in_polygon, polygon_edges,
    segment_on_segment, signed_area2, Segment, Vec2,
};

/// Default robot clearance used for navigability checks (meters).
pub const DEFAULT_CLEARANCE: f64 = 0.2;
/// Resolution of the shortest-path occupancy grid (meters).
pub const PATH_GRID_RES: f64 = 0.05;
pub const MIN_DOOR_WIDTH: f64 = 0.6;
pub const MAX_DOOR_WIDTH: f64 = 1.4;

const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("origin ({x:.3}, {y:.3}) lies inside an obstacle")]
    OriginBlocked { x: f64, y: f64 },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Deserialize)]
struct PoseRecord {
    x: f64,
    y: f64,
    heading: f64,
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::new(r.x, r.y, r.heading)
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_deg(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Absolute bearing (degrees) of `p` relative to this pose's heading, in [0, 360).
    pub fn relative_bearing(&self, p: Vec2) -> f64 {
        normalize_deg((p - self.position()).heading_deg() - self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    pub label: String,
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoorState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoorAttributes {
    pub material: String,
    pub color: String,
}

impl DoorAttributes {
    pub fn unknown() -> Self {
        DoorAttributes {
            material: "unknown".into(),
            color: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub id: String,
    #[serde(with = "segment_pair")]
    pub segment: Segment,
    pub state: DoorState,
    #[serde(flatten)]
    pub attributes: DoorAttributes,
    pub connects: [String; 2],
}

impl Door {
    pub fn width(&self) -> f64 {
        self.segment.length()
    }

    pub fn is_open(&self) -> bool {
        self.state == DoorState::Open
    }
}

mod segment_pair {
    use super::{Segment, Vec2};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: &Segment, ser: S) -> Result<S::Ok, S::Error> {
        [s.a, s.b].serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Segment, D::Error> {
        let [a, b] = <[Vec2; 2]>::deserialize(de)?;
        Ok(Segment::new(a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub position: Vec2,
    pub radius: f64,
    pub salience: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[Vec2; 2]", into = "[Vec2; 2]")]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl From<[Vec2; 2]> for Bounds {
    fn from([a, b]: [Vec2; 2]) -> Self {
        Bounds {
            min: Vec2::new(a.x.min(b.x), a.y.min(b.y)),
            max: Vec2::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }
}

impl From<Bounds> for [Vec2; 2] {
    fn from(b: Bounds) -> Self {
        [b.min, b.max]
    }
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x - BOUNDARY_TOL
            && p.x <= self.max.x + BOUNDARY_TOL
            && p.y >= self.min.y - BOUNDARY_TOL
            && p.y <= self.max.y + BOUNDARY_TOL
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    rooms: Vec<Room>,
    #[serde(default)]
    doors: Vec<Door>,
    #[serde(default)]
    objects: Vec<SceneObject>,
    bounds: Bounds,
}

#[derive(Debug)]
pub struct Scene {
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    pub objects: Vec<SceneObject>,
    pub bounds: Bounds,
    walls: Vec<Segment>,
    path_grid: OnceLock<PathGrid>,
}

impl Clone for Scene {
    fn clone(&self) -> Self {
        Scene {
            rooms: self.rooms.clone(),
            doors: self.doors.clone(),
            objects: self.objects.clone(),
            bounds: self.bounds,
            walls: self.walls.clone(),
            path_grid: OnceLock::new(),
        }
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scene::from_json(&text)
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        Scene::new(file.rooms, file.doors, file.objects, file.bounds)
    }

    pub fn to_json(&self) -> String {
        let file = SceneFile {
            rooms: self.rooms.clone(),
            doors: self.doors.clone(),
            objects: self.objects.clone(),
            bounds: self.bounds,
        };
        serde_json::to_string_pretty(&file).expect("scene serializes")
    }

    /// Validates every invariant and derives the wall set.
    pub fn new(
        rooms: Vec<Room>,
        doors: Vec<Door>,
        objects: Vec<SceneObject>,
        bounds: Bounds,
    ) -> Result<Scene, SceneError> {
        validate(&rooms, &doors, &objects, &bounds)?;
        let walls = derive_walls(&rooms, &doors);
        Ok(Scene {
            rooms,
            doors,
            objects,
            bounds,
            walls,
            path_grid: OnceLock::new(),
        })
    }

    /// Returns a copy with the given door's state replaced.
    pub fn with_door_state(&self, door_id: &str, state: DoorState) -> Result<Scene, SceneError> {
        let mut doors = self.doors.clone();
        let door = doors
            .iter_mut()
            .find(|d| d.id == door_id)
            .ok_or_else(|| invalid("doors", format!("no door with id {door_id}")))?;
        door.state = state;
        Scene::new(self.rooms.clone(), doors, self.objects.clone(), self.bounds)
    }

    /// Wall segments: room edges minus open-door gaps. Closed doors stay solid.
    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn room(&self, id: &str) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    /// Every label the perception layer could ever report in this scene.
    pub fn label_vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .objects
            .iter()
            .map(|o| o.label.clone())
            .chain(self.rooms.iter().map(|r| r.label.clone()))
            .collect();
        if !self.doors.is_empty() {
            v.push("door".to_string());
        }
        v.sort();
        v.dedup();
        v
    }

    /// Distance from `origin` along `azimuth` (absolute, degrees) to the first
    /// wall, closed door or object, capped at `max_range`.
    pub fn raycast(&self, origin: Vec2, azimuth: f64, max_range: f64) -> Result<f64, SceneError> {
        if self.objects.iter().any(|o| origin.dist(o.position) < o.radius) {
            return Err(SceneError::OriginBlocked {
                x: origin.x,
                y: origin.y,
            });
        }
        Ok(self.raycast_unchecked(origin, azimuth, max_range))
    }

    pub(crate) fn raycast_unchecked(&self, origin: Vec2, azimuth: f64, max_range: f64) -> f64 {
        let dir = Vec2::from_heading(azimuth);
        let mut best = max_range;
        for w in &self.walls {
            if let Some(t) = w.ray_hit(origin, dir) {
                if t < best {
                    best = t;
                }
            }
        }
        for o in &self.objects {
            if let Some(t) = crate::geometry::ray_circle_hit(origin, dir, o.position, o.radius) {
                if t < best {
                    best = t;
                }
            }
        }
        best
    }

    /// Range scan with `n_rays` rays evenly spaced CCW starting at the heading.
    pub fn lidar_scan(&self, pose: &Pose, n_rays: usize, max_range: f64) -> Result<Vec<f64>, SceneError> {
        let origin = pose.position();
        // validates origin once
        self.raycast(origin, pose.heading, max_range)?;
        let step = 360.0 / n_rays as f64;
        Ok((0..n_rays)
            .map(|k| {
                let az = normalize_deg(pose.heading + k as f64 * step);
                self.raycast_unchecked(origin, az, max_range)
            })
            .collect())
    }

    /// Distance from `p` to the nearest wall, closed door or object surface.
    pub fn obstacle_distance(&self, p: Vec2) -> f64 {
        let w = self
            .walls
            .iter()
            .map(|w| w.distance_to_point(p))
            .fold(f64::INFINITY, f64::min);
        let o = self
            .objects
            .iter()
            .map(|o| p.dist(o.position) - o.radius)
            .fold(f64::INFINITY, f64::min);
        w.min(o)
    }

    pub fn is_navigable(&self, p: Vec2, clearance: f64) -> bool {
        p.is_finite()
            && self.bounds.contains(p)
            && self.point_in_room(p).is_some()
            && self.obstacle_distance(p) >= clearance
    }

    /// True when a disc of radius `clearance` can slide from `a` to `b` in a
    /// straight line.
    pub fn segment_clear(&self, a: Vec2, b: Vec2, clearance: f64) -> bool {
        let seg = Segment::new(a, b);
        if self
            .walls
            .iter()
            .any(|w| crate::geometry::segment_distance(&seg, w) < clearance)
        {
            return false;
        }
        !self
            .objects
            .iter()
            .any(|o| seg.distance_to_point(o.position) - o.radius < clearance)
    }

    /// Room containing `p`. Boundary points go to the first room (file order)
    /// whose interior lies 1e-6 m along the inward normal of the touching edge.
    pub fn point_in_room(&self, p: Vec2) -> Option<&Room> {
        if !p.is_finite() {
            return None;
        }
        for r in &self.rooms {
            if !on_polygon_boundary(p, &r.polygon, BOUNDARY_TOL) && point_in_polygon(p, &r.polygon) {
                return Some(r);
            }
        }
        for r in &self.rooms {
            for e in polygon_edges(&r.polygon) {
                if e.distance_to_point(p) > BOUNDARY_TOL {
                    continue;
                }
                let d = e.b - e.a;
                let n = Vec2::new(-d.y, d.x) * (1.0 / d.norm());
                let probe = p + n * BOUNDARY_TOL;
                if point_in_polygon(probe, &r.polygon) {
                    return Some(r);
                }
            }
        }
        None
    }

    pub fn room_label_at(&self, p: Vec2) -> Option<&str> {
        self.point_in_room(p).map(|r| r.label.as_str())
    }

    fn path_grid(&self) -> &PathGrid {
        self.path_grid.get_or_init(|| PathGrid::build(self, PATH_GRID_RES, DEFAULT_CLEARANCE))
    }

    /// Shortest obstacle-free path length on the 0.05 m 8-connected grid,
    /// never below the straight-line distance. Infinite when unreachable.
    pub fn shortest_path_length(&self, a: Vec2, b: Vec2) -> f64 {
        if a == b {
            return 0.0;
        }
        match self.path_grid().search(a, b) {
            Some((cost, _)) => cost.max(a.dist(b)),
            None => f64::INFINITY,
        }
    }

    /// Shortest path as a polyline from `a` to `b`, shortcut along clear lines
    /// of sight on the grid.
    pub fn shortest_path(&self, a: Vec2, b: Vec2) -> Option<Vec<Vec2>> {
        if a == b {
            return Some(vec![a]);
        }
        let grid = self.path_grid();
        let (_, cells) = grid.search(a, b)?;
        let mut pts: Vec<Vec2> = cells.iter().map(|&c| grid.center(c)).collect();
        pts[0] = a;
        let last = pts.len() - 1;
        pts[last] = b;
        Some(grid.shortcut(&pts))
    }

    /// The occupancy grid used by the path oracle: (origin, resolution, nx, ny, free flags).
    pub fn path_grid_cells(&self) -> (Vec2, f64, usize, usize, &[bool]) {
        let g = self.path_grid();
        (g.origin, g.res, g.nx, g.ny, &g.free)
    }
}

fn validate(
    rooms: &[Room],
    doors: &[Door],
    objects: &[SceneObject],
    bounds: &Bounds,
) -> Result<(), SceneError> {
    if rooms.is_empty() {
        return Err(invalid("rooms", "scene has no rooms"));
    }
    if !(bounds.min.is_finite() && bounds.max.is_finite())
        || bounds.max.x <= bounds.min.x
        || bounds.max.y <= bounds.min.y
    {
        return Err(invalid("bounds", "must be a non-degenerate rectangle"));
    }
    for (i, r) in rooms.iter().enumerate() {
        let field = format!("rooms[{i}].polygon");
        if r.id.is_empty() {
            return Err(invalid(format!("rooms[{i}].id"), "empty id"));
        }
        if rooms[..i].iter().any(|o| o.id == r.id) {
            return Err(invalid(format!("rooms[{i}].id"), format!("duplicate id {}", r.id)));
        }
        if r.polygon.len() < 3 {
            return Err(invalid(field, format!("{} vertices, need at least 3", r.polygon.len())));
        }
        if r.polygon.iter().any(|p| !p.is_finite()) {
            return Err(invalid(field, "non-finite vertex"));
        }
        if !is_simple_polygon(&r.polygon) {
            return Err(invalid(field, "polygon is not simple"));
        }
        if signed_area2(&r.polygon) <= 0.0 {
            return Err(invalid(field, "polygon must wind counterclockwise"));
        }
        if r.polygon.iter().any(|p| !bounds.contains(*p)) {
            return Err(invalid(field, "vertex outside bounds"));
        }
    }
    for i in 0..rooms.len() {
        for j in (i + 1)..rooms.len() {
            if interiors_overlap(&rooms[i].polygon, &rooms[j].polygon) {
                return Err(invalid(
                    "rooms",
                    format!("rooms {} and {} overlap", rooms[i].id, rooms[j].id),
                ));
            }
        }
    }
    for (i, d) in doors.iter().enumerate() {
        let field = format!("doors[{i}]");
        if doors[..i].iter().any(|o| o.id == d.id) {
            return Err(invalid(format!("{field}.id"), format!("duplicate id {}", d.id)));
        }
        let w = d.width();
        if !(MIN_DOOR_WIDTH - 1e-9..=MAX_DOOR_WIDTH + 1e-9).contains(&w) {
            return Err(invalid(
                format!("{field}.segment"),
                format!("width {w:.3} m outside [{MIN_DOOR_WIDTH}, {MAX_DOOR_WIDTH}]"),
            ));
        }
        if d.connects[0] == d.connects[1] {
            return Err(invalid(format!("{field}.connects"), "door connects a room to itself"));
        }
        for rid in &d.connects {
            let room = rooms
                .iter()
                .find(|r| &r.id == rid)
                .ok_or_else(|| invalid(format!("{field}.connects"), format!("unknown room {rid}")))?;
            let on_edge = polygon_edges(&room.polygon)
                .any(|e| segment_on_segment(&d.segment, &e, BOUNDARY_TOL));
            if !on_edge {
                return Err(invalid(
                    format!("{field}.segment"),
                    format!("not on the boundary of room {rid}"),
                ));
            }
        }
    }
    for (i, o) in objects.iter().enumerate() {
        let field = format!("objects[{i}]");
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            return Err(invalid(format!("{field}.radius"), "must be positive"));
        }
        if !(0.0..=1.0).contains(&o.salience) {
            return Err(invalid(format!("{field}.salience"), "must lie in [0, 1]"));
        }
        if o.label.trim().is_empty() {
            return Err(invalid(format!("{field}.label"), "empty label"));
        }
        if !bounds.contains(o.position) {
            return Err(invalid(format!("{field}.position"), "outside bounds"));
        }
        let inside = rooms.iter().any(|r| point_in_polygon(o.position, &r.polygon));
        if !inside {
            return Err(invalid(format!("{field}.position"), "not inside any room"));
        }
    }
    Ok(())
}

fn interiors_overlap(p: &[Vec2], q: &[Vec2]) -> bool {
    // proper edge crossings
    for e in polygon_edges(p) {
        for f in polygon_edges(q) {
            let d1 = (e.b - e.a).cross(f.a - e.a);
            let d2 = (e.b - e.a).cross(f.b - e.a);
            let d3 = (f.b - f.a).cross(e.a - f.a);
            let d4 = (f.b - f.a).cross(e.b - f.a);
            if d1 * d2 < -1e-12 && d3 * d4 < -1e-12 {
                return true;
            }
        }
    }
    let strictly_inside =
        |pt: Vec2, poly: &[Vec2]| !on_polygon_boundary(pt, poly, BOUNDARY_TOL) && point_in_polygon(pt, poly);
    if p.iter().any(|v| strictly_inside(*v, q)) || q.iter().any(|v| strictly_inside(*v, p)) {
        return true;
    }
    // identical or fully coincident shapes: probe edge midpoints nudged inward
    polygon_edges(p).any(|e| {
        let d = e.b - e.a;
        let n = Vec2::new(-d.y, d.x) * (1e-4 / d.norm());
        strictly_inside(e.midpoint() + n, q)
    })
}

fn derive_walls(rooms: &[Room], doors: &[Door]) -> Vec<Segment> {
    let mut walls: Vec<Segment> = Vec::new();
    for room in rooms {
        for edge in polygon_edges(&room.polygon) {
            let len = edge.length();
            let dir = (edge.b - edge.a) * (1.0 / len);
            let mut gaps: Vec<(f64, f64)> = doors
                .iter()
                .filter(|d| d.is_open() && segment_on_segment(&d.segment, &edge, BOUNDARY_TOL))
                .map(|d| {
                    let s0 = (d.segment.a - edge.a).dot(dir);
                    let s1 = (d.segment.b - edge.a).dot(dir);
                    (s0.min(s1).max(0.0), s0.max(s1).min(len))
                })
                .collect();
            gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cursor = 0.0;
            for (g0, g1) in gaps {
                if g0 > cursor + 1e-9 {
                    push_wall(&mut walls, Segment::new(edge.a + dir * cursor, edge.a + dir * g0));
                }
                cursor = cursor.max(g1);
            }
            if len > cursor + 1e-9 {
                push_wall(&mut walls, Segment::new(edge.a + dir * cursor, edge.b));
            }
        }
    }
    walls
}

fn push_wall(walls: &mut Vec<Segment>, s: Segment) {
    let same = |w: &Segment| {
        (w.a.dist(s.a) < 1e-9 && w.b.dist(s.b) < 1e-9) || (w.a.dist(s.b) < 1e-9 && w.b.dist(s.a) < 1e-9)
    };
    if !walls.iter().any(same) {
        walls.push(s);
    }
}

#[derive(Debug)]
struct PathGrid {
    origin: Vec2,
    res: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    cell: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PathGrid {
    fn build(scene: &Scene, res: f64, clearance: f64) -> PathGrid {
        let origin = scene.bounds.min;
        let nx = ((scene.bounds.max.x - origin.x) / res).ceil() as usize;
        let ny = ((scene.bounds.max.y - origin.y) / res).ceil() as usize;
        let mut free = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let c = Vec2::new(origin.x + (i as f64 + 0.5) * res, origin.y + (j as f64 + 0.5) * res);
                free[j * nx + i] = scene.is_navigable(c, clearance);
            }
        }
        PathGrid {
            origin,
            res,
            nx,
            ny,
            free,
        }
    }

    fn center(&self, c: usize) -> Vec2 {
        let (i, j) = (c % self.nx, c / self.nx);
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) * self.res,
            self.origin.y + (j as f64 + 0.5) * self.res,
        )
    }

    fn cell_of(&self, p: Vec2) -> Option<usize> {
        let i = ((p.x - self.origin.x) / self.res).floor();
        let j = ((p.y - self.origin.y) / self.res).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some(j as usize * self.nx + i as usize)
    }

    /// Nearest free cell to `p`, searching up to 6 cells around its own cell.
    fn free_cell_near(&self, p: Vec2) -> Option<usize> {
        let c = self.cell_of(p)?;
        if self.free[c] {
            return Some(c);
        }
        let (ci, cj) = ((c % self.nx) as i64, (c / self.nx) as i64);
        let mut best: Option<(f64, usize)> = None;
        for dj in -6i64..=6 {
            for di in -6i64..=6 {
                let (i, j) = (ci + di, cj + dj);
                if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                    continue;
                }
                let k = j as usize * self.nx + i as usize;
                if self.free[k] {
                    let d = self.center(k).dist(p);
                    if best.is_none_or(|(bd, bk)| d < bd || (d == bd && k < bk)) {
                        best = Some((d, k));
                    }
                }
            }
        }
        best.map(|(_, k)| k)
    }

    fn search(&self, a: Vec2, b: Vec2) -> Option<(f64, Vec<usize>)> {
        let s = self.free_cell_near(a)?;
        let t = self.free_cell_near(b)?;
        let n = self.nx * self.ny;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(Frontier { cost: 0.0, cell: s });
        let diag = self.res * std::f64::consts::SQRT_2;
        while let Some(Frontier { cost, cell }) = heap.pop() {
            if cell == t {
                break;
            }
            if cost > dist[cell] {
                continue;
            }
            let (i, j) = ((cell % self.nx) as i64, (cell / self.nx) as i64);
            for (di, dj) in NEIGHBORS {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= self.nx as i64 || nj >= self.ny as i64 {
                    continue;
                }
                let k = nj as usize * self.nx + ni as usize;
                if !self.free[k] {
                    continue;
                }
                let step = if di != 0 && dj != 0 { diag } else { self.res };
                let nc = cost + step;
                if nc < dist[k] {
                    dist[k] = nc;
                    prev[k] = cell;
                    heap.push(Frontier { cost: nc, cell: k });
                }
            }
        }
        if !dist[t].is_finite() {
            return None;
        }
        let mut cells = vec![t];
        let mut c = t;
        while c != s {
            c = prev[c];
            cells.push(c);
        }
        cells.reverse();
        Some((dist[t], cells))
    }

    fn line_free(&self, a: Vec2, b: Vec2) -> bool {
        let len = a.dist(b);
        let steps = (len / (self.res * 0.5)).ceil().max(1.0) as usize;
        (0..=steps).all(|k| {
            let p = a + (b - a) * (k as f64 / steps as f64);
            self.cell_of(p).is_some_and(|c| self.free[c])
        })
    }

    fn shortcut(&self, pts: &[Vec2]) -> Vec<Vec2> {
        let mut out = vec![pts[0]];
        let mut anchor = 0;
        while anchor < pts.len() - 1 {
            let mut next = anchor + 1;
            for k in (anchor + 2..pts.len()).rev() {
                if self.line_free(pts[anchor], pts[k]) {
                    next = k;
                    break;
                }
            }
            out.push(pts[next]);
            anchor = next;
        }
        out
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

fn default_decision_steps() -> usize {
    20
}

fn default_max_primitives() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    /// Scene file path, relative to the episode file's directory.
    pub scene: String,
    pub start: Pose,
    pub goal: Vec2,
    pub instruction: String,
    /// Region label the agent must stop in for semantic success, if declared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_region: Option<String>,
    #[serde(default = "default_decision_steps")]
    pub max_decision_steps: usize,
    #[serde(default = "default_max_primitives")]
    pub max_primitives: usize,
    #[serde(skip)]
    pub source_dir: Option<PathBuf>,
}

impl Episode {
    pub fn from_json(text: &str) -> Result<Episode, SceneError> {
        let ep: Episode = serde_json::from_str(text)?;
        if ep.instruction.trim().is_empty() {
            return Err(invalid("instruction", "must not be empty"));
        }
        if ep.id.is_empty() {
            return Err(invalid("id", "must not be empty"));
        }
        Ok(ep)
    }

    pub fn scene_path(&self) -> PathBuf {
        match &self.source_dir {
            Some(dir) => dir.join(&self.scene),
            None => PathBuf::from(&self.scene),
        }
    }

    /// Checks the episode against its scene: start and goal must be navigable.
    pub fn validate(&self, scene: &Scene) -> Result<(), SceneError> {
        if !scene.is_navigable(self.start.position(), DEFAULT_CLEARANCE) {
            return Err(invalid("start", "start pose is not navigable"));
        }
        if !scene.is_navigable(self.goal, DEFAULT_CLEARANCE) {
            return Err(invalid("goal", "goal is not navigable"));
        }
        Ok(())
    }
}

pub fn load_episode(path: impl AsRef<Path>) -> Result<Episode, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut ep = Episode::from_json(&text)?;
    ep.source_dir = path.parent().map(Path::to_path_buf);
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> Scene {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenes").join(name);
        load_scene(path).unwrap()
    }

    fn square_room(size: f64) -> Scene {
        let text = format!(
            r#"{{"rooms":[{{"id":"r","label":"room","polygon":[[0,0],[{s},0],[{s},{s}],[0,{s}]]}}],"bounds":[[0,0],[{s},{s}]]}}"#,
            s = size
        );
        Scene::from_json(&text).unwrap()
    }

    #[test]
    fn loads_two_rooms_fixture() {
        let s = fixture("two_rooms.scene.json");
        assert_eq!(s.rooms.len(), 2);
        assert_eq!(s.doors.len(), 1);
        assert!(s.doors[0].is_open());
        assert!((s.doors[0].width() - 0.9).abs() < 1e-9);
        let again = Scene::from_json(&s.to_json()).unwrap();
        assert_eq!(again.rooms, s.rooms);
        assert_eq!(again.doors, s.doors);
    }

    #[test]
    fn two_vertex_polygon_rejected() {
        let text = r#"{"rooms":[{"id":"r","label":"room","polygon":[[0,0],[1,0]]}],"bounds":[[0,0],[4,4]]}"#;
        match Scene::from_json(text) {
            Err(SceneError::Invalid { field, .. }) => assert_eq!(field, "rooms[0].polygon"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn clockwise_polygon_rejected() {
        let text = r#"{"rooms":[{"id":"r","label":"room","polygon":[[0,0],[0,4],[4,4],[4,0]]}],"bounds":[[0,0],[4,4]]}"#;
        assert!(matches!(Scene::from_json(text), Err(SceneError::Invalid { .. })));
    }

    #[test]
    fn door_off_shared_boundary_rejected() {
        let text = r#"{"rooms":[
            {"id":"a","label":"bedroom","polygon":[[0,0],[4,0],[4,4],[0,4]]},
            {"id":"b","label":"kitchen","polygon":[[4,0],[8,0],[8,4],[4,4]]}],
          "doors":[{"id":"d","segment":[[3.5,1],[3.5,2]],"state":"open","material":"wood","color":"white","connects":["a","b"]}],
          "bounds":[[0,0],[8,4]]}"#;
        match Scene::from_json(text) {
            Err(SceneError::Invalid { field, .. }) => assert_eq!(field, "doors[0].segment"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(Scene::from_json("{rooms: nope"), Err(SceneError::Parse(_))));
    }

    #[test]
    fn overlapping_rooms_rejected() {
        let text = r#"{"rooms":[
            {"id":"a","label":"bedroom","polygon":[[0,0],[4,0],[4,4],[0,4]]},
            {"id":"b","label":"kitchen","polygon":[[2,0],[6,0],[6,4],[2,4]]}],
          "bounds":[[0,0],[8,4]]}"#;
        assert!(matches!(Scene::from_json(text), Err(SceneError::Invalid { .. })));
    }

    #[test]
    fn raycast_passes_open_door() {
        let s = fixture("two_rooms.scene.json");
        let r = s.raycast(Vec2::new(2.0, 2.0), 0.0, 8.0).unwrap();
        assert!(r > 2.0, "ray should continue through the door gap, got {r}");
        let closed = s.with_door_state("d1", DoorState::Closed).unwrap();
        let r = closed.raycast(Vec2::new(2.0, 2.0), 0.0, 8.0).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn raycast_perpendicular_wall_and_empty_corridor() {
        let s = fixture("two_rooms.scene.json");
        let r = s.raycast(Vec2::new(2.0, 2.5), 90.0, 8.0).unwrap();
        assert!((r - 1.5).abs() < 1e-9);
        let hall = square_room(20.0);
        assert_eq!(hall.raycast(Vec2::new(2.0, 10.0), 0.0, 8.0).unwrap(), 8.0);
    }

    #[test]
    fn raycast_inside_object_errors() {
        let s = fixture("two_rooms.scene.json");
        let o = s.objects[0].position;
        assert!(matches!(s.raycast(o, 0.0, 5.0), Err(SceneError::OriginBlocked { .. })));
    }

    #[test]
    fn square_room_scan_ranges() {
        let s = square_room(4.0);
        let scan = s.lidar_scan(&Pose::new(2.0, 2.0, 0.0), 360, 8.0).unwrap();
        assert_eq!(scan.len(), 360);
        assert!(scan.iter().all(|&r| (2.0 - 1e-9..=2.0f64.hypot(2.0) + 1e-9).contains(&r)));
        let four = s.lidar_scan(&Pose::new(2.0, 1.0, 0.0), 4, 8.0).unwrap();
        assert_eq!(four.len(), 4);
        assert!((four[0] - 2.0).abs() < 1e-9);
        assert!((four[1] - 3.0).abs() < 1e-9);
        assert!((four[2] - 2.0).abs() < 1e-9);
        assert!((four[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scan_spikes_across_open_door() {
        let s = fixture("two_rooms.scene.json");
        let scan = s.lidar_scan(&Pose::new(2.0, 2.0, 0.0), 360, 8.0).unwrap();
        // door gap subtends about ±12.7° at 2 m
        assert!(scan[0] > 3.0);
        assert!(scan[5] > 3.0);
        assert!(scan[355] > 3.0);
        assert!(scan[20] < 2.5);
        assert!(scan[340] < 2.5);
    }

    #[test]
    fn navigability() {
        let s = fixture("two_rooms.scene.json");
        assert!(s.is_navigable(Vec2::new(2.5, 1.5), DEFAULT_CLEARANCE));
        assert!(!s.is_navigable(Vec2::new(4.0, 0.5), DEFAULT_CLEARANCE));
        assert!(!s.is_navigable(Vec2::new(20.0, 0.5), DEFAULT_CLEARANCE));
        let hall = Scene::from_json(
            r#"{"rooms":[{"id":"r","label":"room","polygon":[[0,0],[6,0],[6,6],[0,6]]}],
                "objects":[{"label":"chair","position":[3.35,3.0],"radius":0.3,"salience":0.9}],
                "bounds":[[0,0],[6,6]]}"#,
        )
        .unwrap();
        // 0.35 m from the center leaves 0.05 m to the disc surface
        assert!(!hall.is_navigable(Vec2::new(3.0, 3.0), DEFAULT_CLEARANCE));
        assert!(hall.is_navigable(Vec2::new(2.5, 3.0), DEFAULT_CLEARANCE));
    }

    #[test]
    fn point_in_room_rules() {
        let s = fixture("two_rooms.scene.json");
        assert_eq!(s.room_label_at(Vec2::new(2.0, 2.0)), Some("bedroom"));
        assert_eq!(s.room_label_at(Vec2::new(6.0, 1.0)), Some("living room"));
        assert_eq!(s.room_label_at(Vec2::new(-1.0, 1.0)), None);
        // shared wall: first room in file order wins
        assert_eq!(s.room_label_at(Vec2::new(4.0, 3.5)), Some("bedroom"));
        assert_eq!(s.room_label_at(Vec2::new(4.0, 2.0)), Some("bedroom"));
    }

    #[test]
    fn shortest_path_basics() {
        let hall = square_room(6.0);
        let a = Vec2::new(1.0, 3.0);
        assert_eq!(hall.shortest_path_length(a, a), 0.0);
        let d = hall.shortest_path_length(a, Vec2::new(4.0, 3.0));
        assert!((d - 3.0).abs() <= 0.05, "{d}");
        let s = fixture("two_rooms.scene.json");
        let a = Vec2::new(2.0, 3.5);
        let b = Vec2::new(6.0, 3.5);
        let d = s.shortest_path_length(a, b);
        assert!(d > a.dist(b) + 0.5, "detour through the door expected, got {d}");
        let closed = s.with_door_state("d1", DoorState::Closed).unwrap();
        assert!(closed.shortest_path_length(a, b).is_infinite());
    }

    #[test]
    fn reference_polyline_is_straight_in_open_hall() {
        let hall = square_room(6.0);
        let p = hall.shortest_path(Vec2::new(1.0, 3.0), Vec2::new(4.0, 3.0)).unwrap();
        assert_eq!(p, vec![Vec2::new(1.0, 3.0), Vec2::new(4.0, 3.0)]);
    }
}
