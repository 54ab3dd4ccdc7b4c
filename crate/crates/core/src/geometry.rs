//! Planar rigid transforms, oriented boxes and error-frame projections.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Position (meters) and heading (radians) in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    /// Maps a point from this pose's frame into the world frame.
    pub fn to_world(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a world point into this pose's frame.
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Expresses `other` in this pose's frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let p = self.to_local(other.position());
        Pose2::new(p[0], p[1], other.heading - self.heading)
    }

    /// Inverse of [`Pose2::relative`]: maps a pose given in this frame to
    /// the world.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let p = self.to_world(local.position());
        Pose2::new(p[0], p[1], self.heading + local.heading)
    }
}

/// Message-passing edge feature: `v`'s origin expressed in `u`'s frame,
/// plus `sin` and `cos` of the heading difference.
pub fn relative_transform(u: &Pose2, v: &Pose2) -> [f64; 4] {
    let p = u.to_local(v.position());
    let dtheta = v.heading - u.heading;
    [p[0], p[1], dtheta.sin(), dtheta.cos()]
}

/// Rotated rectangle; `length` runs along the heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2, length: f64, width: f64) -> Self {
        Self {
            center,
            length,
            width,
        }
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.center.x,
            self.center.y,
            self.center.heading,
            self.length,
            self.width,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.length > 0.0) || !(self.width > 0.0) {
            return Err(Error::Degenerate(format!(
                "box extents must be positive and finite, got {} x {}",
                self.length, self.width
            )));
        }
        Ok(())
    }

    /// Corners in counterclockwise order, starting front-right.
    pub fn corners(&self) -> [Point; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]].map(|p| self.center.to_world(p))
    }

    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    pub fn contains(&self, p: Point) -> bool {
        let q = self.center.to_local(p);
        q[0].abs() <= 0.5 * self.length && q[1].abs() <= 0.5 * self.width
    }
}

/// Signed area of a simple polygon (positive when counterclockwise).
pub fn shoelace_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman: clips `subject` against the convex counterclockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(e0, e1, cur), cross(e0, e1, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: Point, q: Point, dp: f64, dq: f64) -> Point {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection-over-union of two oriented boxes.
pub fn obb_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a == b {
        return Ok(1.0);
    }
    let d = (a.center.x - b.center.x).hypot(a.center.y - b.center.y);
    if d > a.circumradius() + b.circumradius() {
        return Ok(0.0);
    }
    let inter = shoelace_area(&clip_convex(&a.corners(), &b.corners())).abs();
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Below this displacement (meters) a segment counts as stationary.
pub const STATIONARY_EPS: f64 = 1e-6;

/// Headings along a waypoint sequence from forward differences (backward
/// difference for the last point). Stationary segments inherit the previous
/// heading, starting from 0.
pub fn heading_by_finite_difference(traj: &[Point]) -> Result<Vec<f64>> {
    headings_with_initial(traj, 0.0)
}

/// As [`heading_by_finite_difference`] with an explicit heading used until
/// the first moving segment.
pub fn headings_with_initial(traj: &[Point], initial: f64) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "heading needs at least 2 waypoints, got {}",
            traj.len()
        )));
    }
    let n = traj.len();
    let mut out = Vec::with_capacity(n);
    let mut prev = initial;
    for t in 0..n {
        let (a, b) = if t + 1 < n {
            (traj[t], traj[t + 1])
        } else {
            (traj[t - 1], traj[t])
        };
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let h = if dx.hypot(dy) < STATIONARY_EPS {
            prev
        } else {
            dy.atan2(dx)
        };
        out.push(h);
        prev = h;
    }
    Ok(out)
}

/// Error of `pred` against `gt` split into along-track and cross-track
/// components of the ground-truth heading frame.
pub fn along_cross_error(pred: Point, gt: Point, gt_heading: f64) -> (f64, f64) {
    let (dx, dy) = (pred[0] - gt[0], pred[1] - gt[1]);
    let (s, c) = gt_heading.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}
