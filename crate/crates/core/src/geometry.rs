//! Planar geometry kernels shared by the scene model, perception and planning.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector pointing at `deg` degrees CCW from +x.
    pub fn from_heading(deg: f64) -> Vec2 {
        let (s, c) = sin_cos_deg(deg);
        Vec2::new(c, s)
    }

    /// Bearing of this vector in degrees, normalized to [0, 360).
    pub fn heading_deg(self) -> f64 {
        normalize_deg(self.y.atan2(self.x).to_degrees())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Normalizes an angle in degrees to [0, 360).
pub fn normalize_deg(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_signed_deg(deg: f64) -> f64 {
    let d = normalize_deg(deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Absolute angular difference in degrees, in [0, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_signed_deg(a - b).abs()
}

/// Sine and cosine of an angle in degrees; exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let d = normalize_deg(deg);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.dot(ab);
        if len2 <= 0.0 {
            return p.dist(self.a);
        }
        let t = ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0);
        p.dist(self.a + ab * t)
    }

    /// Parameter along the ray `origin + t·dir` (|dir| = 1) where it meets the
    /// segment, if it does at t ≥ 0.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = self.a - origin;
        let t = w.cross(e) / denom;
        let s = w.cross(dir) / denom;
        if t >= 0.0 && (-EPS..=1.0 + EPS).contains(&s) {
            Some(t)
        } else {
            None
        }
    }

    pub fn intersects(&self, o: &Segment) -> bool {
        segment_distance(self, o) <= EPS
    }
}

/// Minimum distance between two segments.
pub fn segment_distance(s: &Segment, o: &Segment) -> f64 {
    if proper_cross(s, o) {
        return 0.0;
    }
    s.distance_to_point(o.a)
        .min(s.distance_to_point(o.b))
        .min(o.distance_to_point(s.a))
        .min(o.distance_to_point(s.b))
}

fn proper_cross(s: &Segment, o: &Segment) -> bool {
    let d1 = (s.b - s.a).cross(o.a - s.a);
    let d2 = (s.b - s.a).cross(o.b - s.a);
    let d3 = (o.b - o.a).cross(s.a - o.a);
    let d4 = (o.b - o.a).cross(s.b - o.a);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Parameter of the first hit of a unit ray on a circle, if any (t ≥ 0).
pub fn ray_circle_hit(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Twice the signed area; positive for counterclockwise winding.
pub fn signed_area2(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum()
}

pub fn polygon_edges(poly: &[Vec2]) -> impl Iterator<Item = Segment> + '_ {
    let n = poly.len();
    (0..n).map(move |i| Segment::new(poly[i], poly[(i + 1) % n]))
}

/// Crossing-number test; boundary points give an unspecified answer, callers
/// check `on_polygon_boundary` first.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn on_polygon_boundary(p: Vec2, poly: &[Vec2], tol: f64) -> bool {
    polygon_edges(poly).any(|e| e.distance_to_point(p) <= tol)
}

pub fn is_simple_polygon(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let edges: Vec<Segment> = polygon_edges(poly).collect();
    for i in 0..n {
        if edges[i].length() <= EPS {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // adjacent edges may only share their common vertex
                let (e, f) = if j == i + 1 {
                    (&edges[i], &edges[j])
                } else {
                    (&edges[j], &edges[i])
                };
                if e.distance_to_point(f.b) <= EPS || f.distance_to_point(e.a) <= EPS {
                    return false;
                }
            } else if edges[i].intersects(&edges[j]) {
                return false;
            }
        }
    }
    true
}

/// True when `s` lies entirely on the segment `edge` (collinear and contained).
pub fn segment_on_segment(s: &Segment, edge: &Segment, tol: f64) -> bool {
    edge.distance_to_point(s.a) <= tol && edge.distance_to_point(s.b) <= tol
}
