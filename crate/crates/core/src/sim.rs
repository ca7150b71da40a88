// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Planar world simulator: ray-cast lidar, a sparse radar model with
//! quantization, dropout and mirror-multipath ghosts, and a unicycle vehicle
//! following waypoints with noisy odometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetHeader, FrameRecord, DATASET_FORMAT, DATASET_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{
    dist, dot, point_segment_distance, ray_circle_intersection, ray_segment_intersection, reflect_across_line,
    wrap_angle, Point2, Pose2D, RadarDetection, SensorExtrinsics, VehicleState,
};
use crate::localization::ReferenceMap;
use crate::preprocess::RadarFrame;

pub const MAX_ACTOR_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

/// A circular actor walking back and forth between `start` and `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actor {
    pub start: Point2,
    pub end: Point2,
    /// m/s
    pub speed: f64,
    pub radius: f64,
}

impl Actor {
    /// Position and world-frame velocity at time `t`.
    pub fn state_at(&self, t: f64) -> (Point2, Point2) {
        let len = dist(self.start, self.end);
        if len == 0.0 || self.speed == 0.0 {
            return (self.start, [0.0, 0.0]);
        }
        let u = [(self.end[0] - self.start[0]) / len, (self.end[1] - self.start[1]) / len];
        let s = (self.speed * t).rem_euclid(2.0 * len);
        let (along, sign) = if s <= len { (s, 1.0) } else { (2.0 * len - s, -1.0) };
        (
            [self.start[0] + along * u[0], self.start[1] + along * u[1]],
            [sign * self.speed * u[0], sign * self.speed * u[1]],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub waypoints: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub name: String,
    /// Half-width of the square that must contain all geometry (m).
    pub extent: f64,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub actors: Vec<Actor>,
    #[serde(default)]
    pub routes: Vec<Route>,
}

fn inside(p: Point2, extent: f64) -> bool {
    p.iter().all(|c| c.is_finite() && c.abs() <= extent)
}

impl World {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Config(format!("world extent {} must be positive", self.extent)));
        }
        for (k, s) in self.segments.iter().enumerate() {
            for p in [s.a, s.b] {
                if !inside(p, self.extent) {
                    return Err(Error::Config(format!(
                        "segment {k}: endpoint ({}, {}) lies outside extent {}",
                        p[0], p[1], self.extent
                    )));
                }
            }
            if dist(s.a, s.b) == 0.0 {
                return Err(Error::Config(format!("segment {k}: zero length")));
            }
        }
        for (k, a) in self.actors.iter().enumerate() {
            if !(a.radius > 0.0 && a.radius.is_finite()) {
                return Err(Error::Config(format!("actor {k}: radius must be positive")));
            }
            if !(0.0..=MAX_ACTOR_SPEED).contains(&a.speed) {
                return Err(Error::Config(format!(
                    "actor {k}: speed {} outside [0, {MAX_ACTOR_SPEED}] m/s",
                    a.speed
                )));
            }
            if !inside(a.start, self.extent) || !inside(a.end, self.extent) {
                return Err(Error::Config(format!("actor {k}: path leaves the world extent")));
            }
        }
        for (r, route) in self.routes.iter().enumerate() {
            if route.waypoints.is_empty() {
                return Err(Error::Config(format!("route {r}: no waypoints")));
            }
            for (k, &w) in route.waypoints.iter().enumerate() {
                if !inside(w, self.extent) {
                    return Err(Error::Config(format!(
                        "route {r} waypoint {k}: ({}, {}) lies outside extent {}",
                        w[0], w[1], self.extent
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn segment_pairs(&self) -> Vec<(Point2, Point2)> {
        self.segments.iter().map(|s| (s.a, s.b)).collect()
    }

    /// Reference map sampled from the static segments.
    pub fn reference_map(&self, resolution: f64) -> Result<ReferenceMap> {
        ReferenceMap::from_segments(&self.segment_pairs(), resolution)
    }

    /// Distance from `p` to the nearest static or actor surface at time `t`.
    pub fn clearance(&self, p: Point2, t: f64) -> f64 {
        let walls = self
            .segments
            .iter()
            .map(|s| point_segment_distance(p, s.a, s.b))
            .fold(f64::INFINITY, f64::min);
        self.actors
            .iter()
            .map(|a| (dist(p, a.state_at(t).0) - a.radius).abs())
            .fold(walls, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HitKind {
    Wall(usize),
    Actor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub point: Point2,
    pub kind: HitKind,
}

/// First surface hit along the unit direction `dir` within `max_range`.
pub fn cast_ray(world: &World, t: f64, origin: Point2, dir: Point2, max_range: f64) -> Option<RayHit> {
    let mut best: Option<(f64, HitKind)> = None;
    let mut consider = |r: Option<f64>, kind: HitKind| {
        if let Some(r) = r {
            if r <= max_range && best.is_none_or(|(b, _)| r < b) {
                best = Some((r, kind));
            }
        }
    };
    for (k, s) in world.segments.iter().enumerate() {
        consider(ray_segment_intersection(origin, dir, s.a, s.b), HitKind::Wall(k));
    }
    for (k, a) in world.actors.iter().enumerate() {
        consider(ray_circle_intersection(origin, dir, a.state_at(t).0, a.radius), HitKind::Actor(k));
    }
    best.map(|(range, kind)| RayHit {
        range,
        point: [origin[0] + range * dir[0], origin[1] + range * dir[1]],
        kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Radar frame rate (Hz).
    pub radar_rate: f64,
    /// Lidar rate (Hz); must equal the radar rate.
    pub lidar_rate: f64,
    /// m
    pub range_resolution: f64,
    /// m
    pub max_range: f64,
    /// Degrees.
    pub azimuth_resolution: f64,
    /// Total horizontal field of view of each radar (degrees).
    pub field_of_view: f64,
    /// Evenly spaced rays cast inside each azimuth bin.
    pub rays_per_bin: usize,
    /// m/s
    pub velocity_resolution: f64,
    /// Expected fraction of ghost detections per radar frame.
    pub ghost_probability: f64,
    /// Std-dev of the apparent range of a ghost around its mirror image (m).
    pub ghost_range_jitter: f64,
    /// Minimum distance of a ghost from any true surface (m).
    pub ghost_clearance: f64,
    pub dropout_probability: f64,
    pub lidar_max_range: f64,
    /// Degrees.
    pub lidar_step: f64,
    /// Std-dev of measured speed (m/s).
    pub odometry_speed_sigma: f64,
    /// Std-dev of measured yaw rate (rad/s).
    pub odometry_yaw_rate_sigma: f64,
    /// Bias added to the measured yaw rate (rad/s).
    pub odometry_yaw_rate_bias: f64,
    pub cruise_speed: f64,
    pub max_yaw_rate: f64,
    /// m/s²
    pub max_acceleration: f64,
    pub heading_gain: f64,
    /// Distance at which an intermediate waypoint counts as reached (m).
    pub waypoint_tolerance: f64,
    /// Longitudinal offset of the front and rear radars (m).
    pub sensor_offset: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            radar_rate: 20.0,
            lidar_rate: 20.0,
            range_resolution: 0.07,
            max_range: 8.56,
            azimuth_resolution: 14.3,
            field_of_view: 120.0,
            rays_per_bin: 1,
            velocity_resolution: 0.01,
            ghost_probability: 0.6,
            ghost_range_jitter: 0.15,
            ghost_clearance: 0.3,
            dropout_probability: 0.1,
            lidar_max_range: 15.0,
            lidar_step: 1.0,
            odometry_speed_sigma: 0.02,
            odometry_yaw_rate_sigma: 0.02,
            odometry_yaw_rate_bias: 0.0,
            cruise_speed: 0.5,
            max_yaw_rate: 0.8,
            max_acceleration: 0.5,
            heading_gain: 2.0,
            waypoint_tolerance: 0.1,
            sensor_offset: 0.15,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("radar_rate", self.radar_rate),
            ("lidar_rate", self.lidar_rate),
            ("range_resolution", self.range_resolution),
            ("max_range", self.max_range),
            ("azimuth_resolution", self.azimuth_resolution),
            ("field_of_view", self.field_of_view),
            ("velocity_resolution", self.velocity_resolution),
            ("ghost_clearance", self.ghost_clearance),
            ("lidar_max_range", self.lidar_max_range),
            ("lidar_step", self.lidar_step),
            ("cruise_speed", self.cruise_speed),
            ("max_yaw_rate", self.max_yaw_rate),
            ("max_acceleration", self.max_acceleration),
            ("heading_gain", self.heading_gain),
            ("waypoint_tolerance", self.waypoint_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sim.{name} = {v} must be positive")));
            }
        }
        let non_negative = [
            ("ghost_range_jitter", self.ghost_range_jitter),
            ("odometry_speed_sigma", self.odometry_speed_sigma),
            ("odometry_yaw_rate_sigma", self.odometry_yaw_rate_sigma),
            ("sensor_offset", self.sensor_offset),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sim.{name} = {v} must be non-negative")));
            }
        }
        if !self.odometry_yaw_rate_bias.is_finite() {
            return Err(Error::Config("sim.odometry_yaw_rate_bias must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.ghost_probability) {
            return Err(Error::Config(format!(
                "sim.ghost_probability = {} must lie in [0, 1)",
                self.ghost_probability
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_probability) {
            return Err(Error::Config(format!(
                "sim.dropout_probability = {} must lie in [0, 1)",
                self.dropout_probability
            )));
        }
        if self.rays_per_bin == 0 {
            return Err(Error::Config("sim.rays_per_bin must be at least 1".into()));
        }
        if self.field_of_view > 360.0 {
            return Err(Error::Config("sim.field_of_view cannot exceed 360 degrees".into()));
        }
        if self.lidar_rate != self.radar_rate {
            return Err(Error::Config("sim.lidar_rate must equal sim.radar_rate".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.radar_rate
    }

    pub fn extrinsics(&self) -> SensorExtrinsics {
        SensorExtrinsics::front_rear(self.sensor_offset)
    }

    /// Centre angles (rad) of the azimuth bins inside the field of view.
    pub fn bin_centers(&self) -> Vec<f64> {
        let res = self.azimuth_resolution.to_radians();
        let half = 0.5 * self.field_of_view.to_radians();
        let k = (half / res + 1e-9).floor() as i64;
        (-k..=k).map(|i| i as f64 * res).collect()
    }

    pub fn quantize_range(&self, r: f64) -> f64 {
        (r / self.range_resolution).round() * self.range_resolution
    }

    pub fn quantize_velocity(&self, v: f64) -> f64 {
        (v / self.velocity_resolution).round() * self.velocity_resolution
    }
}

/// Lidar returns at `pose`, in the vehicle frame, ordered by ray angle.
pub fn simulate_lidar_scan(world: &World, pose: &Pose2D, t: f64, cfg: &SimConfig) -> Vec<Point2> {
    let n = (360.0 / cfg.lidar_step).round() as usize;
    let origin = pose.translation();
    let mut out = Vec::new();
    for k in 0..n {
        let a = (k as f64 * cfg.lidar_step).to_radians();
        let local_dir = [a.cos(), a.sin()];
        let dir = pose.rotate_vector(local_dir);
        if let Some(hit) = cast_ray(world, t, origin, dir, cfg.lidar_max_range) {
            out.push([hit.range * local_dir[0], hit.range * local_dir[1]]);
        }
    }
    out
}

/// One radar's frame plus which of its detections are ghosts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRadarFrame {
    pub frame: RadarFrame,
    pub ghost: Vec<bool>,
}

fn radial_velocity(q: Point2, rel_v: Point2) -> f64 {
    let r = q[0].hypot(q[1]);
    -dot(q, rel_v) / r
}

/// Radar frames of every sensor for the true vehicle state at time `t`.
pub fn simulate_radar_frame<R: Rng + ?Sized>(
    world: &World,
    vehicle: &VehicleState,
    t: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<SimRadarFrame> {
    let extrinsics = cfg.extrinsics();
    let bins = cfg.bin_centers();
    let res = cfg.azimuth_resolution.to_radians();
    let half_fov = 0.5 * cfg.field_of_view.to_radians();
    let n_sub = cfg.rays_per_bin;
    let mut out = Vec::new();
    for (id, mount) in &extrinsics.mounts {
        let sensor_world = vehicle.pose.compose(mount);
        let origin = sensor_world.translation();
        // sensor velocity (incl. yaw lever arm) expressed in the sensor frame
        let v_body = vehicle.point_velocity(mount.translation());
        let v_sensor = Pose2D::new(0.0, 0.0, mount.psi).inverse().rotate_vector(v_body);
        let to_sensor = |w: Point2| Pose2D::new(0.0, 0.0, sensor_world.psi).inverse().rotate_vector(w);

        let mut detections = Vec::new();
        let mut ghost = Vec::new();
        let mut true_static: Vec<(Point2, usize)> = Vec::new();
        for &center in &bins {
            for j in 0..n_sub {
                let a = center + res * ((j as f64 + 0.5) / n_sub as f64 - 0.5);
                let local_dir = [a.cos(), a.sin()];
                let Some(hit) = cast_ray(world, t, origin, sensor_world.rotate_vector(local_dir), cfg.max_range)
                else {
                    continue;
                };
                if rng.random::<f64>() < cfg.dropout_probability {
                    continue;
                }
                let r = cfg.quantize_range(hit.range);
                if r <= 0.0 || r > cfg.max_range {
                    continue;
                }
                let q = [r * local_dir[0], r * local_dir[1]];
                let rel_v = match hit.kind {
                    HitKind::Wall(k) => {
                        true_static.push((hit.point, k));
                        v_sensor
                    }
                    HitKind::Actor(k) => {
                        let va = to_sensor(world.actors[k].state_at(t).1);
                        [v_sensor[0] - va[0], v_sensor[1] - va[1]]
                    }
                };
                detections.push(RadarDetection::planar(q[0], q[1], cfg.quantize_velocity(radial_velocity(q, rel_v))));
                ghost.push(false);
            }
        }

        let n_true = detections.len() as f64;
        let p = cfg.ghost_probability;
        if p > 0.0 && !true_static.is_empty() && !world.segments.is_empty() {
            let expected = n_true * p / (1.0 - p);
            let mut count = expected.floor() as usize;
            if rng.random::<f64>() < expected.fract() {
                count += 1;
            }
            let jitter = Normal::new(0.0, cfg.ghost_range_jitter.max(f64::MIN_POSITIVE)).expect("finite sigma");
            for _ in 0..count {
                for _attempt in 0..50 {
                    let (target, own_wall) = true_static[rng.random_range(0..true_static.len())];
                    let w = rng.random_range(0..world.segments.len());
                    if w == own_wall {
                        continue;
                    }
                    let Some(g) = ghost_position(world, t, origin, target, w) else {
                        continue;
                    };
                    let local = to_sensor([g[0] - origin[0], g[1] - origin[1]]);
                    let bearing = local[1].atan2(local[0]);
                    if bearing.abs() > half_fov + 0.5 * res {
                        continue;
                    }
                    let a = (bearing / res).round() * res;
                    if a.abs() > half_fov + 1e-9 {
                        continue;
                    }
                    let noise = if cfg.ghost_range_jitter > 0.0 { jitter.sample(rng) } else { 0.0 };
                    let r = cfg.quantize_range(local[0].hypot(local[1]) + noise);
                    if r <= 0.0 || r > cfg.max_range {
                        continue;
                    }
                    let q = [r * a.cos(), r * a.sin()];
                    let world_q = sensor_world.transform_point(q);
                    if world.clearance(world_q, t) < cfg.ghost_clearance {
                        continue;
                    }
                    // a mirror image of a static scatterer has static-consistent Doppler
                    detections.push(RadarDetection::planar(q[0], q[1], cfg.quantize_velocity(radial_velocity(q, v_sensor))));
                    ghost.push(true);
                    break;
                }
            }
        }
        out.push(SimRadarFrame {
            frame: RadarFrame {
                timestamp: t,
                sensor_id: id.clone(),
                detections,
            },
            ghost,
        });
    }
    out
}

/// Mirror image of `target` across wall `w` as seen from `origin`, if the
/// single-bounce path origin → wall → target is geometrically possible.
fn ghost_position(world: &World, t: f64, origin: Point2, target: Point2, w: usize) -> Option<Point2> {
    let s = world.segments[w];
    let side = |p: Point2| (s.b[0] - s.a[0]) * (p[1] - s.a[1]) - (s.b[1] - s.a[1]) * (p[0] - s.a[0]);
    if side(origin) * side(target) <= 0.0 {
        return None;
    }
    let g = reflect_across_line(target, s.a, s.b);
    let d = dist(origin, g);
    if d == 0.0 {
        return None;
    }
    let dir = [(g[0] - origin[0]) / d, (g[1] - origin[1]) / d];
    let bounce = ray_segment_intersection(origin, dir, s.a, s.b)?;
    if bounce >= d {
        return None;
    }
    // the wall must be the first surface on the outbound leg
    match cast_ray(world, t, origin, dir, d) {
        Some(hit) if hit.kind == HitKind::Wall(w) => {}
        _ => return None,
    }
    Some(g)
}

/// Vehicle control for one step: speed and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Control {
    v: f64,
    w: f64,
}

fn step_pose(p: &Pose2D, c: Control, dt: f64) -> Pose2D {
    let (s, co) = p.psi.sin_cos();
    Pose2D::new(p.x + c.v * dt * co, p.y + c.v * dt * s, p.psi + c.w * dt)
}

/// Truth controls that drive the route, one per step.
fn plan_route(waypoints: &[Point2], cfg: &SimConfig) -> Result<(Pose2D, Vec<Control>)> {
    let dt = cfg.dt();
    let start = waypoints[0];
    let first_heading = waypoints
        .iter()
        .find(|&&w| dist(w, start) > 0.0)
        .map_or(0.0, |w| (w[1] - start[1]).atan2(w[0] - start[0]));
    let start_pose = Pose2D::new(start[0], start[1], first_heading);
    let mut pose = start_pose;
    let mut v = cfg.cruise_speed;
    let mut controls = Vec::new();
    let mut target = 1;
    let max_steps = 2_000_000;
    while target < waypoints.len() {
        let wp = waypoints[target];
        let d = dist(pose.translation(), wp);
        let last = target + 1 == waypoints.len();
        if !last && d <= cfg.waypoint_tolerance.max(v * dt) {
            target += 1;
            continue;
        }
        let err = wrap_angle((wp[1] - pose.y).atan2(wp[0] - pose.x) - pose.psi);
        if last && d <= v * dt * (1.0 + 1e-9) {
            let c = Control { v: d / dt, w: 0.0 };
            controls.push(c);
            break;
        }
        let w = (cfg.heading_gain * err).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
        let v_target = cfg.cruise_speed * err.cos().max(0.2);
        let dv = (v_target - v).clamp(-cfg.max_acceleration * dt, cfg.max_acceleration * dt);
        v += dv;
        let c = Control { v, w };
        controls.push(c);
        pose = step_pose(&pose, c, dt);
        if controls.len() > max_steps {
            return Err(Error::Config("route does not terminate; check waypoint spacing".into()));
        }
    }
    Ok((start_pose, controls))
}

/// Drive route `route` of `world` and record every frame.
pub fn simulate_trajectory(world: &World, route: usize, cfg: &SimConfig) -> Result<Dataset> {
    world.validate()?;
    cfg.validate()?;
    let waypoints = &world
        .routes
        .get(route)
        .ok_or_else(|| Error::Config(format!("world `{}` has no route {route}", world.name)))?
        .waypoints;
    let dt = cfg.dt();
    let (start, controls) = plan_route(waypoints, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let speed_noise = Normal::new(0.0, cfg.odometry_speed_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let yaw_noise = Normal::new(0.0, cfg.odometry_yaw_rate_sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut steps: Vec<(Control, Control)> = controls
        .iter()
        .map(|&c| {
            let m = Control {
                v: c.v + if cfg.odometry_speed_sigma > 0.0 { speed_noise.sample(&mut rng) } else { 0.0 },
                w: c.w
                    + cfg.odometry_yaw_rate_bias
                    + if cfg.odometry_yaw_rate_sigma > 0.0 { yaw_noise.sample(&mut rng) } else { 0.0 },
            };
            (c, m)
        })
        .collect();
    let stationary = steps.is_empty();
    if stationary {
        steps.push((Control { v: 0.0, w: 0.0 }, Control { v: 0.0, w: 0.0 }));
    }

    let mut truth = start;
    let mut dead_reckoned = start;
    let mut records = Vec::with_capacity(steps.len());
    for (k, (c, m)) in steps.into_iter().enumerate() {
        let t = if stationary { 0.0 } else { (k + 1) as f64 * dt };
        if !stationary {
            truth = step_pose(&truth, c, dt);
            dead_reckoned = step_pose(&dead_reckoned, m, dt);
        }
        let true_state = VehicleState::new(truth, [c.v, 0.0], c.w)?;
        let radar = simulate_radar_frame(world, &true_state, t, cfg, &mut rng)
            .into_iter()
            .map(|f| f.frame)
            .collect();
        records.push(FrameRecord {
            frame_id: k as u64,
            t,
            radar,
            vehicle: VehicleState::new(dead_reckoned, [m.v, 0.0], m.w)?,
            truth,
            lidar: simulate_lidar_scan(world, &truth, t, cfg),
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            world: world.name.clone(),
            route,
            seed: cfg.seed,
            frame_rate: cfg.radar_rate,
            frame_count: records.len(),
            extrinsics: cfg.extrinsics(),
        },
        records,
    })
}

/// World plus simulator settings, as stored in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub world: World,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.sim.validate()
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Segment> {
    let c = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    (0..4).map(|k| Segment { a: c[k], b: c[(k + 1) % 4] }).collect()
}

fn seg(a: Point2, b: Point2) -> Segment {
    Segment { a, b }
}

fn route(points: &[Point2]) -> Route {
    Route {
        waypoints: points.to_vec(),
    }
}

pub const PRESETS: [&str; 3] = ["env-small", "ghost60", "ghost60-unseen"];

/// Built-in scenarios.
pub fn preset(name: &str) -> Result<Scenario> {
    let scenario = match name {
        "env-small" => {
            let mut segments = rect(-4.0, -3.0, 4.0, 3.0);
            segments.extend(rect(-0.6, -0.4, 0.6, 0.4));
            Scenario {
                world: World {
                    name: "env-small".into(),
                    extent: 5.0,
                    segments,
                    actors: vec![],
                    routes: vec![route(&[[-2.5, -1.6], [2.5, -1.6], [2.5, 1.6], [-2.5, 1.6], [-2.5, -1.6]])],
                },
                sim: SimConfig {
                    ghost_probability: 0.3,
                    ..SimConfig::default()
                },
            }
        }
        "ghost60" => {
            let mut segments = rect(-7.0, -4.5, 7.0, 4.5);
            segments.extend(rect(-1.5, -0.5, 1.5, 0.5));
            segments.push(seg([-7.0, 0.0], [-5.8, 0.0]));
            segments.push(seg([5.8, 3.5], [6.6, 2.7]));
            segments.push(seg([2.8, -4.5], [2.8, -3.7]));
            Scenario {
                world: World {
                    name: "ghost60".into(),
                    extent: 8.0,
                    segments,
                    actors: vec![Actor {
                        start: [-3.0, 3.7],
                        end: [3.0, 3.7],
                        speed: 0.8,
                        radius: 0.25,
                    }],
                    routes: vec![
                        route(&[[-5.0, -2.8], [5.0, -2.8], [5.0, 2.8], [-5.0, 2.8], [-5.0, -2.8]]),
                        route(&[[-4.0, 2.0], [4.0, 2.0], [4.0, -2.0], [-4.0, -2.0], [-4.0, 2.0]]),
                    ],
                },
                sim: SimConfig::default(),
            }
        }
        "ghost60-unseen" => {
            let mut segments = rect(-6.0, -5.0, 6.0, 5.0);
            segments.push(seg([-6.0, 1.5], [-2.5, 1.5]));
            segments.push(seg([2.5, -1.5], [6.0, -1.5]));
            segments.extend(rect(-0.4, -0.4, 0.4, 0.4));
            segments.push(seg([4.0, 2.5], [4.8, 3.3]));
            Scenario {
                world: World {
                    name: "ghost60-unseen".into(),
                    extent: 7.0,
                    segments,
                    actors: vec![Actor {
                        start: [3.5, -3.5],
                        end: [3.5, 0.5],
                        speed: 0.6,
                        radius: 0.25,
                    }],
                    routes: vec![
                        route(&[[-4.0, -3.5], [1.5, -3.5], [1.5, 3.5], [-1.5, 3.5], [-1.5, -3.5], [-4.0, -3.5]]),
                        route(&[[-1.5, 3.5], [1.5, 3.5], [1.5, -3.5], [-4.0, -3.5]]),
                    ],
                },
                sim: SimConfig::default(),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Straight route of `length` metres along +x from the origin.
pub fn straight_world(length: f64) -> World {
    World {
        name: "straight".into(),
        extent: length + 5.0,
        segments: vec![],
        actors: vec![],
        routes: vec![route(&[[0.0, 0.0], [length, 0.0]])],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::expected_static_velocity;
    use crate::training::label_nodes;

    fn wall_world() -> World {
        World {
            name: "wall".into(),
            extent: 10.0,
            segments: vec![seg([2.0, -5.0], [2.0, 5.0])],
            actors: vec![],
            routes: vec![],
        }
    }

    #[test]
    fn lidar_examples() {
        let cfg = SimConfig::default();
        let empty = World {
            segments: vec![],
            ..wall_world()
        };
        assert!(simulate_lidar_scan(&empty, &Pose2D::identity(), 0.0, &cfg).is_empty());
        let scan = simulate_lidar_scan(&wall_world(), &Pose2D::identity(), 0.0, &cfg);
        assert!((scan[0][0] - 2.0).abs() < 1e-12 && scan[0][1].abs() < 1e-12);
        let mut w = wall_world();
        w.actors.push(Actor {
            start: [1.0, 0.0],
            end: [1.0, 0.0],
            speed: 0.0,
            radius: 0.25,
        });
        let scan = simulate_lidar_scan(&w, &Pose2D::identity(), 0.0, &cfg);
        assert!((scan[0][0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn actor_ping_pongs() {
        let a = Actor {
            start: [0.0, 0.0],
            end: [2.0, 0.0],
            speed: 1.0,
            radius: 0.2,
        };
        assert_eq!(a.state_at(0.5), ([0.5, 0.0], [1.0, 0.0]));
        assert_eq!(a.state_at(3.0), ([1.0, 0.0], [-1.0, 0.0]));
        assert_eq!(a.state_at(4.0).0, [0.0, 0.0]);
    }

    #[test]
    fn wall_dead_ahead_has_quantized_doppler() {
        let cfg = SimConfig {
            ghost_probability: 0.0,
            dropout_probability: 0.0,
            ..SimConfig::default()
        };
        let mut w = wall_world();
        w.segments[0] = seg([4.0, -5.0], [4.0, 5.0]);
        let v = VehicleState::new(Pose2D::identity(), [1.0, 0.0], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = simulate_radar_frame(&w, &v, 0.0, &cfg, &mut rng);
        let front = frames.iter().find(|f| f.frame.sensor_id == "front").unwrap();
        let ahead = front.frame.detections.iter().find(|d| d.dy.abs() < 1e-9).unwrap();
        assert!((ahead.dv + 1.0).abs() < 1e-12);
        assert!((ahead.dx - cfg.quantize_range(3.85)).abs() < 1e-12);
    }

    #[test]
    fn noiseless_detections_lie_within_one_cell_of_a_surface() {
        let sc = preset("ghost60").unwrap();
        let cfg = SimConfig {
            ghost_probability: 0.0,
            dropout_probability: 0.0,
            ..sc.sim
        };
        let pose = Pose2D::new(-2.0, -2.0, 0.4);
        let v = VehicleState::stationary(pose);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = simulate_radar_frame(&sc.world, &v, 0.0, &cfg, &mut rng);
        let ext = cfg.extrinsics();
        let bound = 0.5 * cfg.range_resolution + 1e-9;
        let mut n = 0;
        for f in &frames {
            let sensor = pose.compose(ext.mount(&f.frame.sensor_id).unwrap());
            for d in &f.frame.detections {
                n += 1;
                assert!(sc.world.clearance(sensor.transform_point(d.position()), 0.0) <= bound);
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn static_doppler_matches_formula() {
        let sc = preset("ghost60").unwrap();
        let v = VehicleState::new(Pose2D::new(0.0, -2.8, 0.1), [0.5, 0.0], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ext = sc.sim.extrinsics();
        for _ in 0..20 {
            for f in simulate_radar_frame(&sc.world, &v, 100.0, &sc.sim, &mut rng) {
                let mount = ext.mount(&f.frame.sensor_id).unwrap();
                let v_s = Pose2D::new(0.0, 0.0, mount.psi)
                    .inverse()
                    .rotate_vector(v.point_velocity(mount.translation()));
                for (d, _) in f.frame.detections.iter().zip(&f.ghost) {
                    let expected = expected_static_velocity(d.position(), v_s).unwrap();
                    let sensor = v.pose.compose(mount);
                    let w = sensor.transform_point(d.position());
                    let near_actor = sc.world.actors.iter().any(|a| dist(w, a.state_at(100.0).0) < a.radius + 0.1);
                    if !near_actor {
                        assert!((d.dv - expected).abs() <= sc.sim.velocity_resolution);
                    }
                }
            }
        }
    }

    #[test]
    fn ghosts_fail_the_label_test() {
        let sc = preset("ghost60").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ext = sc.sim.extrinsics();
        let (mut ghosts, mut invalid, mut total, mut total_invalid) = (0, 0, 0, 0);
        for k in 0..60 {
            let pose = Pose2D::new(-4.0 + 0.13 * k as f64, -2.8, 0.0);
            let v = VehicleState::new(pose, [0.5, 0.0], 0.0).unwrap();
            let lidar = simulate_lidar_scan(&sc.world, &pose, k as f64 * 0.05, &sc.sim);
            for f in simulate_radar_frame(&sc.world, &v, k as f64 * 0.05, &sc.sim, &mut rng) {
                let mount = ext.mount(&f.frame.sensor_id).unwrap();
                for (d, &g) in f.frame.detections.iter().zip(&f.ghost) {
                    let p = mount.transform_point(d.position());
                    let bad = !label_nodes(&[[p[0], p[1], 0.0, 0.0]], &lidar, 0.2)[0];
                    total += 1;
                    total_invalid += bad as usize;
                    if g {
                        ghosts += 1;
                        invalid += bad as usize;
                    }
                }
            }
        }
        assert!(ghosts > 100);
        assert!(invalid as f64 >= 0.95 * ghosts as f64, "{invalid}/{ghosts}");
        let rate = total_invalid as f64 / total as f64;
        assert!((0.5..=0.7).contains(&rate), "false-detection rate {rate}");
    }

    #[test]
    fn straight_run_has_four_hundred_frames() {
        let cfg = SimConfig {
            odometry_speed_sigma: 0.0,
            odometry_yaw_rate_sigma: 0.0,
            ..SimConfig::default()
        };
        let ds = simulate_trajectory(&straight_world(10.0), 0, &cfg).unwrap();
        assert_eq!(ds.records.len(), 400);
        let last = ds.records.last().unwrap();
        assert!((last.truth.x - 10.0).abs() < 1e-9 && (last.t - 20.0).abs() < 1e-9);
        for r in &ds.records {
            assert_eq!(r.vehicle.pose, r.truth);
        }
    }

    #[test]
    fn zero_length_route_gives_one_stationary_frame() {
        let mut w = straight_world(0.0);
        w.routes[0].waypoints = vec![[1.0, 1.0]];
        let ds = simulate_trajectory(&w, 0, &SimConfig::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].vehicle.v, [0.0, 0.0]);
    }

    #[test]
    fn noiseless_odometry_reproduces_truth_on_turning_route() {
        let mut sc = preset("env-small").unwrap();
        sc.sim.odometry_speed_sigma = 0.0;
        sc.sim.odometry_yaw_rate_sigma = 0.0;
        let ds = simulate_trajectory(&sc.world, 0, &sc.sim).unwrap();
        assert!(ds.records.len() > 100);
        for r in &ds.records {
            assert_eq!(r.vehicle.pose, r.truth);
        }
        let end = ds.records.last().unwrap().truth;
        assert!(dist(end.translation(), [-2.5, -1.6]) < 0.05);
    }

    #[test]
    fn waypoint_outside_extent_is_rejected() {
        let mut w = straight_world(3.0);
        w.routes[0].waypoints.push([100.0, 0.0]);
        assert!(matches!(simulate_trajectory(&w, 0, &SimConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn bad_segment_is_named() {
        let mut sc = preset("env-small").unwrap();
        sc.world.segments[3].b = [40.0, 0.0];
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("segment 3"), "{err}");
    }

    #[test]
    fn same_seed_same_dataset() {
        let sc = preset("env-small").unwrap();
        let a = simulate_trajectory(&sc.world, 0, &sc.sim).unwrap();
        let b = simulate_trajectory(&sc.world, 0, &sc.sim).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scenario_toml_round_trip() {
        for name in PRESETS {
            let sc = preset(name).unwrap();
            let text = sc.to_toml().unwrap();
            assert_eq!(Scenario::from_toml(&text).unwrap(), sc);
        }
        assert!(Scenario::from_toml("[world]\nname='x'\nextent=1\nbogus=1\n").is_err());
    }
}
