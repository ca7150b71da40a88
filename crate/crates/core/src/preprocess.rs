// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Radar frame fusion, ground filtering, static/dynamic separation and the
//! sliding-window occupancy grid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, transform_detection, Point2, Pose2D, RadarDetection, SensorExtrinsics, VehicleState};

/// One radar's detections for one scan, in that radar's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarFrame {
    pub timestamp: f64,
    pub sensor_id: String,
    pub detections: Vec<RadarDetection>,
}

/// A detection expressed in the vehicle frame, remembering where the radar
/// that produced it sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedDetection {
    pub detection: RadarDetection,
    /// Mount position of the originating radar in the vehicle frame.
    pub origin: Point2,
}

impl AsRef<RadarDetection> for FusedDetection {
    fn as_ref(&self) -> &RadarDetection {
        &self.detection
    }
}

impl AsRef<RadarDetection> for RadarDetection {
    fn as_ref(&self) -> &RadarDetection {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame {
    pub timestamp: f64,
    pub static_detections: Vec<RadarDetection>,
    pub dynamic_detections: Vec<RadarDetection>,
    pub vehicle: VehicleState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Detections closer than this to the vehicle origin are dropped (m).
    pub min_range: f64,
    /// Radial-velocity residual above which a detection is dynamic (m/s).
    pub dynamic_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_range: 1.5,
            dynamic_threshold: 0.05,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range >= 0.0 && self.min_range.is_finite()) {
            return Err(Error::Config(format!(
                "preprocess.min_range must be >= 0, got {}",
                self.min_range
            )));
        }
        if !(self.dynamic_threshold > 0.0 && self.dynamic_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "preprocess.dynamic_threshold must be > 0, got {}",
                self.dynamic_threshold
            )));
        }
        Ok(())
    }
}

/// Express every radar's detections in the vehicle frame, flattening the
/// elevation. Output is ordered by sensor id rank, then by input order.
pub fn fuse_frames(frames: &[RadarFrame], extrinsics: &SensorExtrinsics) -> Result<Vec<FusedDetection>> {
    let mut ranked = Vec::with_capacity(frames.len());
    for f in frames {
        let mount = *extrinsics.mount(&f.sensor_id)?;
        let rank = extrinsics.rank(&f.sensor_id).unwrap_or(usize::MAX);
        ranked.push((rank, mount, f));
    }
    ranked.sort_by_key(|(rank, _, _)| *rank);

    let mut out = Vec::with_capacity(frames.iter().map(|f| f.detections.len()).sum());
    for (_, mount, frame) in ranked {
        let origin = mount.translation();
        out.extend(frame.detections.iter().map(|d| {
            let mut det = transform_detection(d, &mount);
            det.dz = 0.0;
            FusedDetection { detection: det, origin }
        }));
    }
    Ok(out)
}

/// Keep detections whose planar range from the vehicle origin is at least
/// `min_range` (boundary kept).
pub fn filter_min_range<T: AsRef<RadarDetection> + Clone>(detections: &[T], min_range: f64) -> Vec<T> {
    detections
        .iter()
        .filter(|d| d.as_ref().range() >= min_range)
        .cloned()
        .collect()
}

/// Radial velocity a static reflector at `q` (relative to the sensor) would
/// show when the sensor moves with velocity `v`.
pub fn expected_static_velocity(q: Point2, v: Point2) -> Result<f64> {
    let n = norm(q);
    if n <= 0.0 || !n.is_finite() {
        return Err(Error::Domain(format!(
            "cannot predict radial velocity for a detection at ({}, {})",
            q[0], q[1]
        )));
    }
    Ok(dot([-q[0] / n, -q[1] / n], v))
}

/// Split detections into (static, dynamic) by comparing measured radial
/// velocity with the static prediction for the originating sensor.
///
/// The sensor's own velocity includes the lever-arm term from yaw rate.
/// Detections coinciding with their sensor cannot be checked and are
/// reported as dynamic.
pub fn split_dynamic_static(
    detections: &[FusedDetection],
    vehicle: &VehicleState,
    threshold: f64,
) -> (Vec<RadarDetection>, Vec<RadarDetection>) {
    let mut stat = Vec::with_capacity(detections.len());
    let mut dynamic = Vec::new();
    for fd in detections {
        let d = fd.detection;
        let q = [d.dx - fd.origin[0], d.dy - fd.origin[1]];
        let v_sensor = vehicle.point_velocity(fd.origin);
        match expected_static_velocity(q, v_sensor) {
            Ok(expected) if (expected - d.dv).abs() <= threshold => stat.push(d),
            _ => dynamic.push(d),
        }
    }
    (stat, dynamic)
}

/// Run fusion, ground filtering and the static/dynamic split for one scan.
pub fn preprocess_scan(
    frames: &[RadarFrame],
    extrinsics: &SensorExtrinsics,
    vehicle: &VehicleState,
    cfg: &PreprocessConfig,
) -> Result<FusedFrame> {
    let fused = fuse_frames(frames, extrinsics)?;
    let kept = filter_min_range(&fused, cfg.min_range);
    let (static_detections, dynamic_detections) = split_dynamic_static(&kept, vehicle, cfg.dynamic_threshold);
    let timestamp = frames.iter().map(|f| f.timestamp).fold(f64::NEG_INFINITY, f64::max);
    Ok(FusedFrame {
        timestamp: if timestamp.is_finite() { timestamp } else { 0.0 },
        static_detections,
        dynamic_detections,
        vehicle: *vehicle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Cell edge length (m).
    pub resolution: f64,
    /// The grid spans `[-half_extent, half_extent]` on both axes (m).
    pub half_extent: f64,
    /// Number of frames in the sliding window.
    pub window: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.20,
            half_extent: 5.0,
            window: 20,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config(format!("grid.resolution must be > 0, got {}", self.resolution)));
        }
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::Config(format!("grid.half_extent must be > 0, got {}", self.half_extent)));
        }
        if self.window == 0 || self.window > u16::MAX as usize {
            return Err(Error::Config(format!("grid.window must be in 1..=65535, got {}", self.window)));
        }
        if self.cells_per_side() > 4096 {
            return Err(Error::Config("grid has more than 4096 cells per side".into()));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        // tolerate 10 / 0.2 landing a hair above 50
        ((2.0 * self.half_extent / self.resolution) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Grid node: `[x, y, z, p_det]` in the current vehicle frame.
pub type GridNode = [f64; 4];

/// Hit-frequency raster over the last `window` static scans.
///
/// Scans are stored world-anchored and re-rasterized relative to the latest
/// pose on every update, so the contents are a pure function of the scans
/// still in the window.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    config: GridConfig,
    side: usize,
    scans: VecDeque<Vec<Point2>>,
    pose: Pose2D,
    hits: Vec<u16>,
    stamp: Vec<u32>,
}

impl OccupancyGrid {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let side = config.cells_per_side();
        Ok(Self {
            config,
            side,
            scans: VecDeque::with_capacity(config.window + 1),
            pose: Pose2D::identity(),
            hits: vec![0; side * side],
            stamp: vec![u32::MAX; side * side],
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn cells_per_side(&self) -> usize {
        self.side
    }

    pub fn cell_count(&self) -> usize {
        self.side * self.side
    }

    /// Pose the raster is currently aligned to.
    pub fn reference_pose(&self) -> Pose2D {
        self.pose
    }

    pub fn frames_stored(&self) -> usize {
        self.scans.len()
    }

    /// Cell `(ix, iy)` containing a vehicle-frame point, if inside the grid.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let h = self.config.half_extent;
        let r = self.config.resolution;
        let fx = ((p[0] + h) / r).floor();
        let fy = ((p[1] + h) / r).floor();
        let n = self.side as f64;
        if fx >= 0.0 && fy >= 0.0 && fx < n && fy < n {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        let h = self.config.half_extent;
        let r = self.config.resolution;
        [-h + (ix as f64 + 0.5) * r, -h + (iy as f64 + 0.5) * r]
    }

    pub fn hits(&self, ix: usize, iy: usize) -> u16 {
        self.hits[iy * self.side + ix]
    }

    pub fn p_det(&self, ix: usize, iy: usize) -> f64 {
        self.hits(ix, iy) as f64 / self.config.window as f64
    }

    /// Add one scan of static detections (vehicle frame at `new_pose`),
    /// evict scans older than the window and re-rasterize at `new_pose`.
    pub fn update(&mut self, static_detections: &[RadarDetection], new_pose: Pose2D) {
        let world: Vec<Point2> = static_detections
            .iter()
            .map(|d| new_pose.transform_point(d.position()))
            .collect();
        self.scans.push_back(world);
        while self.scans.len() > self.config.window {
            self.scans.pop_front();
        }
        self.pose = new_pose;
        self.rasterize();
    }

    fn rasterize(&mut self) {
        self.hits.fill(0);
        self.stamp.fill(u32::MAX);
        let pose = self.pose;
        for (k, scan) in self.scans.iter().enumerate() {
            for &w in scan {
                let local = pose.inverse_transform_point(w);
                let h = self.config.half_extent;
                let r = self.config.resolution;
                let fx = ((local[0] + h) / r).floor();
                let fy = ((local[1] + h) / r).floor();
                let n = self.side as f64;
                if !(fx >= 0.0 && fy >= 0.0 && fx < n && fy < n) {
                    continue;
                }
                let idx = fy as usize * self.side + fx as usize;
                // one hit per cell per scan
                if self.stamp[idx] != k as u32 {
                    self.stamp[idx] = k as u32;
                    self.hits[idx] += 1;
                }
            }
        }
    }

    /// One node per occupied cell, at the cell center, row-major order.
    pub fn extract_nodes(&self) -> Vec<GridNode> {
        let mut nodes = Vec::new();
        for iy in 0..self.side {
            for ix in 0..self.side {
                let h = self.hits[iy * self.side + ix];
                if h > 0 {
                    let [x, y] = self.cell_center(ix, iy);
                    nodes.push([x, y, 0.0, h as f64 / self.config.window as f64]);
                }
            }
        }
        nodes
    }

    /// Raw per-cell hit counts, row-major.
    pub fn hit_counts(&self) -> &[u16] {
        &self.hits
    }
}
