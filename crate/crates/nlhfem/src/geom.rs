//! Minimal 2D point/vector arithmetic used by the mesh and assembly layers.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// A point (or vector) in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product, positive for a left turn.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Rotate by +90°: (x, y) -> (-y, x).
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Twice the signed area of triangle (a, b, c); positive when CCW.
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Area of triangle (a, b, c), assuming positive orientation.
pub fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * signed_area2(a, b, c)
}

/// Smallest interior angle of triangle (a, b, c), in radians.
pub fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let angle = |p: Point, q: Point, r: Point| {
        let u = q - p;
        let v = r - p;
        (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
    };
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b))
}
