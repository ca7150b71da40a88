// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Planar geometry shared by every pipeline stage.
//!
//! Headings are counterclockwise-positive with zero along +x, and are always
//! kept wrapped to `(-pi, pi]`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D point or vector in meters.
pub type Point2 = [f64; 2];

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid maps -pi to pi already; guard the rounding case where
    // a tiny negative remainder lands exactly on TAU.
    if r <= -PI {
        r += TAU;
    }
    r
}

#[inline]
pub fn dist(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[inline]
pub fn dist_sq(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn norm(a: Point2) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

#[inline]
pub fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Planar rigid pose: translation plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
        }
    }

    pub fn translation(&self) -> Point2 {
        [self.x, self.y]
    }

    /// `self ∘ other`: the pose `other`, given relative to `self`, expressed in
    /// the frame `self` is relative to.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.psi.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.psi + other.psi,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.psi.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.psi,
        )
    }

    /// Map a point from this pose's local frame into the parent frame.
    #[inline]
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.psi.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Map a point from the parent frame into this pose's local frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.psi.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Rotate a free vector (no translation).
    #[inline]
    pub fn rotate_vector(&self, v: Point2) -> Point2 {
        let (s, c) = self.psi.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }
}

pub fn compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

pub fn invert(p: &Pose2D) -> Pose2D {
    p.inverse()
}

/// One radar return. `dv` is radial velocity, negative when approaching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarDetection {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dv: f64,
}

impl RadarDetection {
    pub fn new(dx: f64, dy: f64, dz: f64, dv: f64) -> Self {
        Self { dx, dy, dz, dv }
    }

    pub fn planar(dx: f64, dy: f64, dv: f64) -> Self {
        Self::new(dx, dy, 0.0, dv)
    }

    pub fn position(&self) -> Point2 {
        [self.dx, self.dy]
    }

    pub fn range(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Rigidly move a detection's position by `t`. Radial velocity is left as is.
pub fn transform_detection(d: &RadarDetection, t: &Pose2D) -> RadarDetection {
    let [x, y] = t.transform_point(d.position());
    RadarDetection {
        dx: x,
        dy: y,
        dz: d.dz,
        dv: d.dv,
    }
}

/// Vehicle pose plus body-frame velocity and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose2D,
    /// Translational velocity in the body frame (m/s).
    pub v: Point2,
    /// rad/s
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn new(pose: Pose2D, v: Point2, yaw_rate: f64) -> Result<Self> {
        let s = Self { pose, v, yaw_rate };
        if !s.is_finite() {
            return Err(Error::Domain("vehicle state has non-finite components".into()));
        }
        Ok(s)
    }

    pub fn stationary(pose: Pose2D) -> Self {
        Self {
            pose,
            v: [0.0, 0.0],
            yaw_rate: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.v.iter().all(|c| c.is_finite())
            && self.yaw_rate.is_finite()
    }

    /// Velocity of a body-fixed point `r` (body frame), expressed in the body frame.
    pub fn point_velocity(&self, r: Point2) -> Point2 {
        [
            self.v[0] - self.yaw_rate * r[1],
            self.v[1] + self.yaw_rate * r[0],
        ]
    }
}

/// Mount pose of each radar in the vehicle body frame.
///
/// Iteration order of the map defines the fusion order; sensor ids are kept
/// sorted so that `front` precedes `rear`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorExtrinsics {
    pub mounts: BTreeMap<String, Pose2D>,
}

impl SensorExtrinsics {
    pub fn new(mounts: impl IntoIterator<Item = (String, Pose2D)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, pose) in mounts {
            if map.insert(id.clone(), pose).is_some() {
                return Err(Error::Config(format!("duplicate sensor id `{id}`")));
            }
        }
        Ok(Self { mounts: map })
    }

    /// Front radar at +x facing forward, rear radar at -x facing backward.
    pub fn front_rear(offset: f64) -> Self {
        Self::new([
            ("front".to_string(), Pose2D::new(offset, 0.0, 0.0)),
            ("rear".to_string(), Pose2D::new(-offset, 0.0, PI)),
        ])
        .expect("distinct ids")
    }

    pub fn mount(&self, sensor_id: &str) -> Result<&Pose2D> {
        self.mounts
            .get(sensor_id)
            .ok_or_else(|| Error::Config(format!("unknown sensor id `{sensor_id}`")))
    }

    /// Fusion rank of a sensor: position in the sorted id list.
    pub fn rank(&self, sensor_id: &str) -> Option<usize> {
        self.mounts.keys().position(|k| k == sensor_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.mounts.keys().map(String::as_str)
    }
}

impl Default for SensorExtrinsics {
    fn default() -> Self {
        Self::front_rear(0.15)
    }
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Reflect `p` across the infinite line through `a` and `b`.
pub fn reflect_across_line(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = dot(ab, ab);
    let ap = [p[0] - a[0], p[1] - a[1]];
    let t = dot(ap, ab) / len2;
    let foot = [a[0] + t * ab[0], a[1] + t * ab[1]];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

/// Ray/segment intersection. Returns the ray parameter (distance along the
/// unit `dir`) of the hit, if any.
pub fn ray_segment_intersection(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = [a[0] - origin[0], a[1] - origin[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Ray/circle intersection: nearest non-negative ray parameter.
pub fn ray_circle_intersection(origin: Point2, dir: Point2, center: Point2, radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1]];
    let b = dot(oc, dir);
    let c = dot(oc, oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        // origin inside the circle
        Some(t1)
    } else {
        None
    }
}
