//! Planar domains with exact membership and distance-to-boundary queries.
//!
//! Every walk step asks the domain two questions: is the current point still
//! inside, and how large is the biggest ball centred there that fits inside.
//! Both answers are exact for the three supported shapes.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// A point (or vector) in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Exact midpoint; halving is exact in binary floating point.
    #[inline]
    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Unit vector at angle `angle` from the x-axis.
    #[inline]
    pub fn from_angle(angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c, s)
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Inward half-plane `{p : normal·p < offset}` for one polygon edge, with a
/// unit outward normal so `offset - normal·p` is the signed edge distance.
#[derive(Clone, Copy, Debug, PartialEq)]
struct HalfPlane {
    normal: Point,
    offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Ball { center: Point, radius: f64 },
    Rect { lo: Point, hi: Point },
    Polygon { vertices: Vec<Point>, edges: Vec<HalfPlane> },
}

/// An open, bounded, convex region of the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    shape: Shape,
    diameter: f64,
}

impl Domain {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !center.is_finite() || !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "ball needs a finite center and positive radius, got {center} r={radius}"
            )));
        }
        Ok(Self {
            shape: Shape::Ball { center, radius },
            diameter: 2.0 * radius,
        })
    }

    /// The unit disc centred at the origin.
    pub fn unit_ball() -> Self {
        Self::ball(Point::new(0.0, 0.0), 1.0).expect("unit ball is valid")
    }

    /// Axis-aligned box `(x0, x1) × (y0, y1)`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let (lo, hi) = (Point::new(x0, y0), Point::new(x1, y1));
        if !lo.is_finite() || !hi.is_finite() || !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidDomain(format!(
                "box needs x0 < x1 and y0 < y1, got ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(Self {
            shape: Shape::Rect { lo, hi },
            diameter: (hi - lo).norm(),
        })
    }

    pub fn unit_square() -> Self {
        Self::rect(0.0, 0.0, 1.0, 1.0).expect("unit square is valid")
    }

    /// Convex polygon from its vertices in either orientation.
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidDomain(format!(
                "polygon needs at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidDomain("polygon vertex is not finite".into()));
        }
        let signed_area2: f64 = (0..n)
            .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
            .sum();
        if signed_area2 == 0.0 {
            return Err(Error::InvalidDomain("polygon has zero area".into()));
        }
        let mut vertices = vertices;
        if signed_area2 < 0.0 {
            vertices.reverse();
        }
        // Strict left turns at every vertex plus a total turning of 2π rule out
        // both reflex corners and self-intersecting (star-shaped) outlines.
        let mut turning = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let (e1, e2) = (b - a, c - b);
            let turn = e1.cross(e2);
            if turn <= 0.0 {
                return Err(Error::InvalidDomain(format!(
                    "polygon is not strictly convex at vertex {b}"
                )));
            }
            turning += turn.atan2(e1.dot(e2));
        }
        if (turning - 2.0 * std::f64::consts::PI).abs() > 1e-9 {
            return Err(Error::InvalidDomain(
                "polygon outline is self-intersecting".into(),
            ));
        }
        let edges = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                let t = b - a;
                let len = t.norm();
                let normal = Point::new(t.y / len, -t.x / len);
                HalfPlane {
                    normal,
                    offset: normal.dot(a),
                }
            })
            .collect();
        let mut diameter: f64 = 0.0;
        for (i, p) in vertices.iter().enumerate() {
            for q in &vertices[i + 1..] {
                diameter = diameter.max((*p - *q).norm());
            }
        }
        Ok(Self {
            shape: Shape::Polygon { vertices, edges },
            diameter,
        })
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// True iff `p` lies in the open region.
    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        self.distance(p) > 0.0
    }

    /// Membership in the closure, with a relative slack of `rel_tol` times
    /// the diameter for points that should sit exactly on the boundary.
    pub fn contains_closed(&self, p: Point, rel_tol: f64) -> bool {
        self.signed_distance(p) >= -rel_tol * self.diameter
    }

    /// Distance from `p` to the boundary, or 0 when `p` is not inside.
    #[inline]
    pub fn distance(&self, p: Point) -> f64 {
        self.signed_distance(p).max(0.0)
    }

    /// Positive inside, negative outside. Outside the ball and the polygons
    /// the magnitude is a lower bound on the true distance, not the distance.
    #[inline]
    fn signed_distance(&self, p: Point) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => radius - (p - *center).norm(),
            Shape::Rect { lo, hi } => (p.x - lo.x)
                .min(hi.x - p.x)
                .min(p.y - lo.y)
                .min(hi.y - p.y),
            Shape::Polygon { edges, .. } => edges
                .iter()
                .map(|e| e.offset - e.normal.dot(p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Area of the region.
    pub fn area(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Rect { lo, hi } => (hi.x - lo.x) * (hi.y - lo.y),
            Shape::Polygon { vertices, .. } => {
                let n = vertices.len();
                0.5 * (0..n)
                    .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
                    .sum::<f64>()
            }
        }
    }

    /// Smallest axis-aligned box containing the region.
    pub fn bounding_box(&self) -> (Point, Point) {
        match &self.shape {
            Shape::Ball { center, radius } => (
                Point::new(center.x - radius, center.y - radius),
                Point::new(center.x + radius, center.y + radius),
            ),
            Shape::Rect { lo, hi } => (*lo, *hi),
            Shape::Polygon { vertices, .. } => {
                let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
                let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in vertices {
                    lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
                    hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
                }
                (lo, hi)
            }
        }
    }

    /// Polygon outline when the region is a box or polygon, counter-clockwise.
    pub fn outline(&self) -> Option<Vec<Point>> {
        match &self.shape {
            Shape::Ball { .. } => None,
            Shape::Rect { lo, hi } => Some(vec![
                *lo,
                Point::new(hi.x, lo.y),
                *hi,
                Point::new(lo.x, hi.y),
            ]),
            Shape::Polygon { vertices, .. } => Some(vertices.clone()),
        }
    }

    /// Uniform sample from the region given two uniforms in (0, 1).
    ///
    /// Polygons use rejection from the bounding box, so callers supply a
    /// closure producing fresh uniforms.
    pub fn sample_uniform(&self, mut uniform: impl FnMut() -> f64) -> Point {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = radius * uniform().sqrt();
                *center + Point::from_angle(2.0 * std::f64::consts::PI * uniform()) * r
            }
            Shape::Rect { lo, hi } => Point::new(
                lo.x + (hi.x - lo.x) * uniform(),
                lo.y + (hi.y - lo.y) * uniform(),
            ),
            Shape::Polygon { .. } => {
                let (lo, hi) = self.bounding_box();
                loop {
                    let p = Point::new(
                        lo.x + (hi.x - lo.x) * uniform(),
                        lo.y + (hi.y - lo.y) * uniform(),
                    );
                    if self.contains(p) {
                        return p;
                    }
                }
            }
        }
    }

    /// Image of the region under `p ↦ origin + scale·p`.
    pub fn scaled(&self, scale: f64, origin: Point) -> Result<Self> {
        let map = |p: Point| origin + p * scale;
        match &self.shape {
            Shape::Ball { center, radius } => Self::ball(map(*center), radius * scale),
            Shape::Rect { lo, hi } => {
                let (a, b) = (map(*lo), map(*hi));
                Self::rect(a.x, a.y, b.x, b.y)
            }
            Shape::Polygon { vertices, .. } => {
                Self::polygon(vertices.iter().map(|v| map(*v)).collect())
            }
        }
    }
}

impl fmt::Display for Domain {
    /// Same syntax the run configuration accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Shape::Ball { center, radius } => {
                write!(f, "ball({}, {}, {})", center.x, center.y, radius)
            }
            Shape::Rect { lo, hi } => write!(f, "box({}, {}, {}, {})", lo.x, lo.y, hi.x, hi.y),
            Shape::Polygon { vertices, .. } => {
                write!(f, "polygon(")?;
                for (i, v) in vertices.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "({}, {})", v.x, v.y)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    /// Parses `ball(cx, cy, r)`, `box(x0, y0, x1, y1)` or
    /// `polygon((x1, y1), (x2, y2), ...)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse domain `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let kind = s[..open].trim();
        let body = &s[open + 1..s.len() - 1];
        let numbers = |text: &str| -> Result<Vec<f64>> {
            text.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match kind {
            "ball" => match numbers(body)?.as_slice() {
                [cx, cy, r] => Domain::ball(Point::new(*cx, *cy), *r),
                _ => Err(bad()),
            },
            "box" => match numbers(body)?.as_slice() {
                [x0, y0, x1, y1] => Domain::rect(*x0, *y0, *x1, *y1),
                _ => Err(bad()),
            },
            "polygon" => {
                let cleaned: String = body.chars().filter(|c| *c != '(' && *c != ')').collect();
                let flat = numbers(&cleaned)?;
                if flat.len() % 2 != 0 {
                    return Err(bad());
                }
                Domain::polygon(flat.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
            }
            _ => Err(bad()),
        }
    }
}
