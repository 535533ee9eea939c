//! Planar line geometry and back-projection of image lines to plane normals.
//!
//! Every type here is an immutable value and every function is pure.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this (pixels) are treated as coincident.
pub const EPS_GEOM: f64 = 1e-6;
/// Lines whose `|sin(angle)|` is at or below this are treated as parallel.
pub const EPS_PARALLEL: f64 = 1e-9;

pub type Point3 = nalgebra::Point3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("points coincide within {EPS_GEOM} px")]
    CoincidentPoints,
    #[error("lines are parallel within |sin| <= {EPS_PARALLEL}")]
    NearParallel,
}

/// A location in the image plane, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn dist_sq(self, other: Point2) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }

    pub fn sub(self, other: Point2) -> Vec2 {
        Vec2::new(self.u - other.u, self.v - other.v)
    }

    pub fn offset(self, d: Vec2, t: f64) -> Point2 {
        Point2::new(self.u + t * d.u, self.v + t * d.v)
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// A displacement in the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub u: f64,
    pub v: f64,
}

impl Vec2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.u * o.u + self.v * o.v
    }

    /// Scalar 2D cross product `self.u * o.v - self.v * o.u`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.u * o.v - self.v * o.u
    }

    pub fn norm(self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn neg(self) -> Vec2 {
        Vec2::new(-self.u, -self.v)
    }
}

/// Flips `d` so that `u > 0`, or `u == 0` and `v > 0`.
pub fn canonical_dir(d: Vec2) -> Vec2 {
    if d.u < 0.0 || (d.u == 0.0 && d.v < 0.0) {
        d.neg()
    } else {
        d
    }
}

/// Unit direction of `d`, canonicalized.
///
/// The vector is first divided by its largest absolute component. Division is
/// correctly rounded, so any two exactly proportional inputs produce the same
/// bits here and therefore the same normalized output.
fn unit_canonical_dir(d: Vec2) -> Vec2 {
    let d = canonical_dir(d);
    let m = d.u.abs().max(d.v.abs());
    let r = Vec2::new(d.u / m, d.v / m);
    let n = r.norm();
    Vec2::new(r.u / n, r.v / n)
}

/// An infinite line `base + t * dir` with a unit, canonicalized direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub base: Point2,
    pub dir: Vec2,
}

impl Line2 {
    /// Builds a line from any nonzero direction; the direction is normalized and
    /// canonicalized.
    pub fn new(base: Point2, dir: Vec2) -> Self {
        Self {
            base,
            dir: unit_canonical_dir(dir),
        }
    }

    /// Line with the given direction angle (radians).
    pub fn from_angle(base: Point2, angle: f64) -> Self {
        Self {
            base,
            dir: canonical_dir(Vec2::new(angle.cos(), angle.sin())),
        }
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        self.base.offset(self.dir, t)
    }

    /// Offset along the line of the orthogonal projection of `p`.
    pub fn foot_offset(&self, p: Point2) -> f64 {
        self.dir.dot(p.sub(self.base))
    }

    /// Signed distance of `p` from the line (positive on the left of `dir`
    /// in a y-up frame).
    pub fn signed_distance(&self, p: Point2) -> f64 {
        p.sub(self.base).cross(self.dir)
    }

    /// Direction angle folded into `[0, pi)`.
    pub fn angle(&self) -> f64 {
        let a = self.dir.v.atan2(self.dir.u);
        if a < 0.0 {
            a + std::f64::consts::PI
        } else if a >= std::f64::consts::PI {
            a - std::f64::consts::PI
        } else {
            a
        }
    }
}

pub fn line_through_points(p: Point2, q: Point2) -> Result<Line2, GeomError> {
    if p.dist(q) <= EPS_GEOM {
        return Err(GeomError::CoincidentPoints);
    }
    Ok(Line2::new(p, q.sub(p)))
}

pub fn point_line_distance(l: &Line2, p: Point2) -> f64 {
    l.signed_distance(p).abs()
}

/// Unsigned angle between two lines in `[0, pi/2]`.
pub fn line_angle(l1: &Line2, l2: &Line2) -> f64 {
    let s = l1.dir.cross(l2.dir).abs();
    let c = l1.dir.dot(l2.dir).abs();
    s.atan2(c)
}

pub fn line_intersection(l1: &Line2, l2: &Line2) -> Result<Point2, GeomError> {
    let s = l1.dir.cross(l2.dir);
    if s.abs() <= EPS_PARALLEL {
        return Err(GeomError::NearParallel);
    }
    // Solve base1 + a*dir1 = base2 + b*dir2 for a; then average the two
    // parameterizations so the result does not depend on argument order.
    let w = l2.base.sub(l1.base);
    let a = w.cross(l2.dir) / s;
    let b = w.cross(l1.dir) / s;
    let p1 = l1.point_at(a);
    let p2 = l2.point_at(b);
    Ok(Point2::new(0.5 * (p1.u + p2.u), 0.5 * (p1.v + p2.v)))
}

/// Pinhole intrinsics without skew or distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        Self { fx, fy, cx, cy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0, 0.0)
    }

    /// Unnormalized viewing ray `K^-1 (u, v, 1)`.
    pub fn ray(&self, p: Point2) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Point2> {
        if pc.z <= 0.0 {
            return None;
        }
        Some(Point2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }
}

/// Flips `n` so that its first component with magnitude above `1e-12` is positive.
pub fn canonical_normal(n: Vector3<f64>) -> Vector3<f64> {
    for k in 0..3 {
        if n[k].abs() > 1e-12 {
            return if n[k] < 0.0 { -n } else { n };
        }
    }
    n
}

/// Unit normal of the plane spanned by the camera center and the image line.
pub fn backproject_line(k: &Intrinsics, l: &Line2) -> Vector3<f64> {
    // Homogeneous image line (p, 1) x (dir, 0), mapped to the plane normal by K^T.
    let d = l.dir;
    let pu = l.base.u - k.cx;
    let pv = l.base.v - k.cy;
    let n = Vector3::new(-k.fx * d.v, k.fy * d.u, pu * d.v - pv * d.u);
    canonical_normal(n.normalize())
}
