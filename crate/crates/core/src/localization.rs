// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Map-based localization: unicycle EKF, point-to-point ICP and chi-square
//! innovation gating.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::geometry::{dist, wrap_angle, Point2, Pose2D, VehicleState};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: Pose2D,
    pub cov: Matrix3<f64>,
}

impl EkfState {
    pub fn new(mean: Pose2D, cov: Matrix3<f64>) -> Result<Self> {
        let s = Self { mean, cov };
        if !s.covariance_is_valid() {
            return Err(Error::Domain("initial covariance is not symmetric positive definite".into()));
        }
        Ok(s)
    }

    pub fn with_diagonal(mean: Pose2D, sigma_xy: f64, sigma_psi: f64) -> Result<Self> {
        Self::new(
            mean,
            Matrix3::from_diagonal(&Vector3::new(sigma_xy * sigma_xy, sigma_xy * sigma_xy, sigma_psi * sigma_psi)),
        )
    }

    pub fn covariance_is_valid(&self) -> bool {
        let c = &self.cov;
        if c.iter().any(|v| !v.is_finite()) || (c - c.transpose()).amax() > 1e-12 {
            return false;
        }
        c.symmetric_eigenvalues().iter().all(|&e| e > 0.0)
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Propagate the mean by the unicycle model, using the body-frame velocity
/// of `u`, and the covariance by the model Jacobian plus `q`.
pub fn ekf_predict(s: &EkfState, u: &VehicleState, dt: f64, q: &Matrix3<f64>) -> Result<EkfState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("prediction step {dt} must be positive")));
    }
    let (sin, cos) = s.mean.psi.sin_cos();
    let [vx, vy] = u.v;
    let wx = vx * cos - vy * sin;
    let wy = vx * sin + vy * cos;
    let mean = Pose2D::new(s.mean.x + wx * dt, s.mean.y + wy * dt, s.mean.psi + u.yaw_rate * dt);
    #[rustfmt::skip]
    let f = Matrix3::new(
        1.0, 0.0, -wy * dt,
        0.0, 1.0, wx * dt,
        0.0, 0.0, 1.0,
    );
    let cov = symmetrize(&(f * s.cov * f.transpose() + q));
    Ok(EkfState { mean, cov })
}

/// Lower-tail quantile of the chi-square distribution, found by bisection on
/// the regularized incomplete gamma function.
pub fn chi2_quantile(dof: u32, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi-square needs at least one degree of freedom".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    let k = dof as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let mut hi = dof as f64;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateDecision {
    Accept { mahalanobis_sq: f64 },
    Reject { mahalanobis_sq: f64 },
    /// Innovation covariance could not be factorized.
    Singular,
    /// Measurement noise is unbounded; nothing to fuse.
    Uninformative,
}

impl GateDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, GateDecision::Accept { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Gate {
    pub dof: u32,
    pub p_valid: f64,
    pub threshold: f64,
}

impl Chi2Gate {
    pub fn new(dof: u32, p_valid: f64) -> Result<Self> {
        Ok(Self {
            dof,
            p_valid,
            threshold: chi2_quantile(dof, p_valid)?,
        })
    }

    pub fn test(&self, innovation: &Vector3<f64>, s: &Matrix3<f64>) -> GateDecision {
        let Some(chol) = s.cholesky() else {
            log::warn!("innovation covariance is not positive definite; measurement rejected");
            return GateDecision::Singular;
        };
        let m2 = innovation.dot(&chol.solve(innovation));
        if !m2.is_finite() {
            return GateDecision::Singular;
        }
        if m2 <= self.threshold {
            GateDecision::Accept { mahalanobis_sq: m2 }
        } else {
            GateDecision::Reject { mahalanobis_sq: m2 }
        }
    }
}

/// Accept iff `νᵀ S⁻¹ ν` is within the three-dof chi-square quantile at `p_valid`.
pub fn chi2_gate(innovation: &Vector3<f64>, s: &Matrix3<f64>, p_valid: f64) -> Result<GateDecision> {
    Ok(Chi2Gate::new(3, p_valid)?.test(innovation, s))
}

pub fn pose_innovation(z: &Pose2D, mean: &Pose2D) -> Vector3<f64> {
    Vector3::new(z.x - mean.x, z.y - mean.y, wrap_angle(z.psi - mean.psi))
}

/// Identity-model update in Joseph form. Rejected or unusable measurements
/// return the input state unchanged.
pub fn ekf_update(s: &EkfState, z: &Pose2D, r: &Matrix3<f64>, gate: &Chi2Gate) -> (EkfState, GateDecision) {
    let innovation = pose_innovation(z, &s.mean);
    if r.iter().any(|v| v.is_infinite()) {
        return (*s, GateDecision::Uninformative);
    }
    let sm = s.cov + r;
    let decision = gate.test(&innovation, &sm);
    if !decision.accepted() {
        return (*s, decision);
    }
    let Some(s_inv) = sm.try_inverse() else {
        return (*s, GateDecision::Singular);
    };
    let k = s.cov * s_inv;
    let dx = k * innovation;
    let mean = Pose2D::new(s.mean.x + dx[0], s.mean.y + dx[1], s.mean.psi + dx[2]);
    let ikh = Matrix3::identity() - k;
    let cov = symmetrize(&(ikh * s.cov * ikh.transpose() + k * r * k.transpose()));
    (EkfState { mean, cov }, decision)
}

/// Point set of the environment with a nearest-neighbour index.
#[derive(Debug, Clone)]
pub struct ReferenceMap {
    resolution: f64,
    tree: KdTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMeta {
    pub format: String,
    pub version: u32,
    pub resolution: f64,
    pub point_count: usize,
}

pub const MAP_FORMAT: &str = "radar-enhance-map";

impl ReferenceMap {
    pub fn new(points: Vec<Point2>, resolution: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("reference map has no points".into()));
        }
        if !(resolution > 0.0) {
            return Err(Error::Config(format!("map resolution {resolution} must be positive")));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Domain("reference map contains a non-finite point".into()));
        }
        Ok(Self {
            resolution,
            tree: KdTree::new(&points),
        })
    }

    /// Sample each segment every `resolution` metres, endpoints included.
    pub fn from_segments(segments: &[(Point2, Point2)], resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::Config(format!("map resolution {resolution} must be positive")));
        }
        let mut points = Vec::new();
        for &(a, b) in segments {
            let n = (dist(a, b) / resolution).ceil().max(1.0) as usize;
            for k in 0..=n {
                let t = k as f64 / n as f64;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        Self::new(points, resolution)
    }

    pub fn points(&self) -> &[Point2] {
        self.tree.points()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Write `x y` lines to `path` and a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for p in self.points() {
            text.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let meta = MapMeta {
            format: MAP_FORMAT.into(),
            version: 1,
            resolution: self.resolution,
            point_count: self.points().len(),
        };
        let meta_path = Self::meta_path(path);
        let json = serde_json::to_string_pretty(&meta)?;
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = Self::meta_path(path);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MapMeta = serde_json::from_str(&meta_text)?;
        if meta.format != MAP_FORMAT || meta.version != 1 {
            return Err(Error::Config(format!("unsupported map format {} v{}", meta.format, meta.version)));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::with_capacity(meta.point_count);
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push([x, y]),
                _ => {
                    return Err(Error::Record {
                        line: k + 1,
                        reason: format!("expected `x y`, got {line:?}"),
                    })
                }
            }
        }
        if points.len() != meta.point_count {
            return Err(Error::Config(format!(
                "map has {} points, sidecar says {}",
                points.len(),
                meta.point_count
            )));
        }
        Self::new(points, meta.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_correspondence: f64,
    pub max_iterations: usize,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_correspondence: 1.0,
            max_iterations: 50,
            translation_tolerance: 1e-4,
            rotation_tolerance: 1e-4,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_correspondence > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("ICP correspondence range and iteration cap must be positive".into()));
        }
        if !(self.translation_tolerance > 0.0 && self.rotation_tolerance > 0.0) {
            return Err(Error::Config("ICP tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Vehicle pose in the map frame.
    pub pose: Pose2D,
    /// Fraction of source points with a correspondence at `pose`.
    pub fitness: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Closed-form rigid transform minimising `Σ‖R a + t − b‖²`.
pub fn fit_rigid(pairs: &[(Point2, Point2)]) -> Option<Pose2D> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let (mut ca, mut cb) = ([0.0; 2], [0.0; 2]);
    for (a, b) in pairs {
        ca = [ca[0] + a[0], ca[1] + a[1]];
        cb = [cb[0] + b[0], cb[1] + b[1]];
    }
    ca = [ca[0] / n, ca[1] / n];
    cb = [cb[0] / n, cb[1] / n];
    let (mut sdot, mut scross) = (0.0, 0.0);
    for (a, b) in pairs {
        let (ax, ay) = (a[0] - ca[0], a[1] - ca[1]);
        let (bx, by) = (b[0] - cb[0], b[1] - cb[1]);
        sdot += ax * bx + ay * by;
        scross += ax * by - ay * bx;
    }
    let theta = scross.atan2(sdot);
    let (s, c) = theta.sin_cos();
    Some(Pose2D::new(cb[0] - (c * ca[0] - s * ca[1]), cb[1] - (s * ca[0] + c * ca[1]), theta))
}

fn correspondences(source: &[Point2], map: &ReferenceMap, pose: &Pose2D, max: f64) -> Vec<(Point2, Point2)> {
    source
        .iter()
        .filter_map(|&p| {
            let w = pose.transform_point(p);
            map.tree.nearest_within(w, max).map(|(j, _)| (w, map.points()[j]))
        })
        .collect()
}

/// Align vehicle-frame `source` to the map starting from `init`. Returns
/// `Ok(None)` when no source point has a correspondence.
pub fn icp_align(source: &[Point2], map: &ReferenceMap, init: Pose2D, cfg: &IcpConfig) -> Result<Option<IcpResult>> {
    if source.is_empty() {
        return Err(Error::Contract("ICP source cloud is empty".into()));
    }
    cfg.validate()?;
    let mut pose = init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let pairs = correspondences(source, map, &pose, cfg.max_correspondence);
        let Some(delta) = fit_rigid(&pairs) else {
            return Ok(None);
        };
        pose = delta.compose(&pose);
        if delta.x.hypot(delta.y) < cfg.translation_tolerance && delta.psi.abs() < cfg.rotation_tolerance {
            converged = true;
            break;
        }
    }
    let inliers = correspondences(source, map, &pose, cfg.max_correspondence).len();
    if inliers == 0 {
        return Ok(None);
    }
    Ok(Some(IcpResult {
        pose,
        fitness: inliers as f64 / source.len() as f64,
        iterations,
        converged,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Process noise per step of `nominal_dt`.
    pub process_sigma_xy: f64,
    pub process_sigma_psi: f64,
    pub nominal_dt: f64,
    /// Measurement noise at ICP fitness 1; divided by fitness.
    pub measurement_sigma_xy: f64,
    pub measurement_sigma_psi: f64,
    pub initial_sigma_xy: f64,
    pub initial_sigma_psi: f64,
    pub p_valid: f64,
    /// ICP results below this fitness are discarded.
    pub min_fitness: f64,
    pub icp: IcpConfig,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            process_sigma_xy: 0.02,
            process_sigma_psi: 0.01,
            nominal_dt: 0.05,
            measurement_sigma_xy: 0.05,
            measurement_sigma_psi: 0.02,
            initial_sigma_xy: 0.1,
            initial_sigma_psi: 0.05,
            p_valid: 0.95,
            min_fitness: 0.3,
            icp: IcpConfig::default(),
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("process_sigma_xy", self.process_sigma_xy),
            ("process_sigma_psi", self.process_sigma_psi),
            ("nominal_dt", self.nominal_dt),
            ("measurement_sigma_xy", self.measurement_sigma_xy),
            ("measurement_sigma_psi", self.measurement_sigma_psi),
            ("initial_sigma_xy", self.initial_sigma_xy),
            ("initial_sigma_psi", self.initial_sigma_psi),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.p_valid > 0.0 && self.p_valid < 1.0) {
            return Err(Error::Config(format!("p_valid = {} must lie in (0, 1)", self.p_valid)));
        }
        if !(0.0..=1.0).contains(&self.min_fitness) {
            return Err(Error::Config(format!("min_fitness = {} must lie in [0, 1]", self.min_fitness)));
        }
        self.icp.validate()
    }

    pub fn process_noise(&self, dt: f64) -> Matrix3<f64> {
        let k = dt / self.nominal_dt;
        let xy = self.process_sigma_xy * self.process_sigma_xy * k;
        let psi = self.process_sigma_psi * self.process_sigma_psi * k;
        Matrix3::from_diagonal(&Vector3::new(xy, xy, psi))
    }

    pub fn measurement_noise(&self, fitness: f64) -> Matrix3<f64> {
        let xy = self.measurement_sigma_xy * self.measurement_sigma_xy / fitness;
        let psi = self.measurement_sigma_psi * self.measurement_sigma_psi / fitness;
        Matrix3::from_diagonal(&Vector3::new(xy, xy, psi))
    }

    pub fn initial_state(&self, mean: Pose2D) -> Result<EkfState> {
        EkfState::with_diagonal(mean, self.initial_sigma_xy, self.initial_sigma_psi)
    }
}

/// One step of filter input: odometry over the interval ending at
/// `timestamp`, and the vehicle-frame cloud observed at that time.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationInput {
    pub timestamp: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub cloud: Vec<Point2>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalizationReport {
    pub estimates: Vec<(f64, Pose2D)>,
    pub accepted: usize,
    pub rejected: usize,
    pub unavailable: usize,
}

/// Predict on every input and update from ICP whenever a cloud is present.
/// The first input only sets the time origin.
pub fn localize_trajectory(
    inputs: &[LocalizationInput],
    map: &ReferenceMap,
    init: EkfState,
    cfg: &EkfConfig,
) -> Result<LocalizationReport> {
    cfg.validate()?;
    let gate = Chi2Gate::new(3, cfg.p_valid)?;
    let mut state = init;
    let mut report = LocalizationReport::default();
    let mut last_t: Option<f64> = None;
    for input in inputs {
        if let Some(t0) = last_t {
            let dt = input.timestamp - t0;
            if dt > 0.0 {
                let u = VehicleState::new(state.mean, [input.speed, 0.0], input.yaw_rate)?;
                state = ekf_predict(&state, &u, dt, &cfg.process_noise(dt))?;
            }
        }
        last_t = Some(input.timestamp);
        if input.cloud.is_empty() {
            report.unavailable += 1;
        } else {
            match icp_align(&input.cloud, map, state.mean, &cfg.icp)? {
                Some(m) if m.fitness >= cfg.min_fitness => {
                    let (next, decision) = ekf_update(&state, &m.pose, &cfg.measurement_noise(m.fitness), &gate);
                    state = next;
                    if decision.accepted() {
                        report.accepted += 1;
                    } else {
                        report.rejected += 1;
                    }
                }
                _ => report.unavailable += 1,
            }
        }
        report.estimates.push((input.timestamp, state.mean));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn q_small() -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1e-3, 1e-3, 1e-4))
    }

    fn state() -> EkfState {
        EkfState::with_diagonal(Pose2D::identity(), 0.1, 0.05).unwrap()
    }

    #[test]
    fn predict_examples() {
        let s = state();
        let still = VehicleState::stationary(Pose2D::identity());
        let p = ekf_predict(&s, &still, 0.05, &q_small()).unwrap();
        assert_eq!(p.mean, s.mean);
        assert!((p.cov - (s.cov + q_small())).amax() < 1e-15);

        let fwd = VehicleState::new(Pose2D::identity(), [1.0, 0.0], 0.0).unwrap();
        let p = ekf_predict(&s, &fwd, 1.0, &q_small()).unwrap();
        assert!((p.mean.x - 1.0).abs() < 1e-15 && p.mean.y.abs() < 1e-15);

        let turn = VehicleState::new(Pose2D::identity(), [0.0, 0.0], FRAC_PI_2).unwrap();
        let p = ekf_predict(&s, &turn, 1.0, &q_small()).unwrap();
        assert!((p.mean.psi - FRAC_PI_2).abs() < 1e-15);

        assert!(ekf_predict(&s, &still, 0.0, &q_small()).is_err());
    }

    #[test]
    fn predict_jacobian_matches_finite_differences() {
        let s = EkfState::with_diagonal(Pose2D::new(1.0, 2.0, 0.7), 0.1, 0.1).unwrap();
        let u = VehicleState::new(Pose2D::identity(), [0.8, 0.1], 0.3).unwrap();
        let dt = 0.05;
        let h = 1e-6;
        let f = |psi: f64| {
            let st = EkfState {
                mean: Pose2D::new(1.0, 2.0, psi),
                cov: s.cov,
            };
            ekf_predict(&st, &u, dt, &Matrix3::zeros()).unwrap().mean
        };
        let (a, b) = (f(0.7 + h), f(0.7 - h));
        let dxdpsi = (a.x - b.x) / (2.0 * h);
        let dydpsi = (a.y - b.y) / (2.0 * h);
        let (sin, cos) = 0.7f64.sin_cos();
        assert!((dxdpsi - dt * (-0.8 * sin - 0.1 * cos)).abs() < 1e-8);
        assert!((dydpsi - dt * (0.8 * cos - 0.1 * sin)).abs() < 1e-8);
    }

    /// Chi-square(3) CDF in closed form: erf(√(x/2)) − √(2x/π)·e^(−x/2).
    fn chi2_3_cdf(x: f64) -> f64 {
        statrs::function::erf::erf((x / 2.0).sqrt()) - (2.0 * x / PI).sqrt() * (-x / 2.0).exp()
    }

    #[test]
    fn quantile_matches_closed_form_cdf() {
        let q = chi2_quantile(3, 0.95).unwrap();
        assert!((q - 7.8147).abs() < 1e-3, "{q}");
        assert!((chi2_3_cdf(q) - 0.95).abs() < 1e-10);
        assert!(chi2_quantile(0, 0.95).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
        let q2 = chi2_quantile(2, 0.5).unwrap();
        assert!((q2 - 2.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gate_examples() {
        let gate = Chi2Gate::new(3, 0.95).unwrap();
        let s = Matrix3::identity();
        assert!(gate.test(&Vector3::zeros(), &s).accepted());
        assert!(gate.test(&Vector3::new(7.80f64.sqrt(), 0.0, 0.0), &s).accepted());
        assert!(!gate.test(&Vector3::new(7.82f64.sqrt(), 0.0, 0.0), &s).accepted());
        assert!(!gate.test(&Vector3::new(0.0, 10.0, 0.0), &s).accepted());
        assert_eq!(gate.test(&Vector3::zeros(), &Matrix3::zeros()), GateDecision::Singular);
    }

    #[test]
    fn update_examples() {
        let gate = Chi2Gate::new(3, 0.95).unwrap();
        let s = state();
        let r = Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.01));
        let (u, d) = ekf_update(&s, &s.mean, &r, &gate);
        assert!(d.accepted());
        assert_eq!(u.mean, s.mean);
        assert!(u.cov.trace() < s.cov.trace());

        let (u, d) = ekf_update(&s, &Pose2D::new(5.0, 0.0, 0.0), &r, &gate);
        assert!(!d.accepted());
        assert_eq!(u, s);

        let unit = EkfState::new(Pose2D::identity(), Matrix3::identity()).unwrap();
        let (u, _) = ekf_update(&unit, &Pose2D::new(1.0, 0.0, 0.0), &Matrix3::identity(), &gate);
        assert!((u.mean.x - 0.5).abs() < 1e-12);
        assert!((u.cov[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infinite_measurement_noise_leaves_mean_unchanged() {
        let gate = Chi2Gate::new(3, 0.95).unwrap();
        let s = state();
        let r = Matrix3::from_diagonal(&Vector3::repeat(f64::INFINITY));
        let (u, _) = ekf_update(&s, &Pose2D::new(0.1, 0.1, 0.1), &r, &gate);
        assert_eq!(u.mean, s.mean);
    }

    #[test]
    fn heading_innovation_is_wrapped() {
        let gate = Chi2Gate::new(3, 0.95).unwrap();
        let s = EkfState::with_diagonal(Pose2D::new(0.0, 0.0, PI - 0.01), 0.1, 0.1).unwrap();
        let r = Matrix3::from_diagonal(&Vector3::repeat(0.01));
        let (u, d) = ekf_update(&s, &Pose2D::new(0.0, 0.0, -PI + 0.01), &r, &gate);
        assert!(d.accepted());
        assert!(wrap_angle(u.mean.psi - PI).abs() < 0.02);
    }

    fn scattered_map(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point2> {
        let mut pts: Vec<Point2> = Vec::new();
        while pts.len() < n {
            let p = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            if pts.iter().all(|&q| dist(p, q) > 0.6) {
                pts.push(p);
            }
        }
        pts
    }

    #[test]
    fn icp_identity_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = scattered_map(&mut rng, 60);
        let map = ReferenceMap::new(pts.clone(), 0.05).unwrap();
        let cfg = IcpConfig::default();
        let r = icp_align(&pts, &map, Pose2D::identity(), &cfg).unwrap().unwrap();
        assert_eq!(r.fitness, 1.0);
        assert!(r.pose.x.abs() < 1e-12 && r.pose.y.abs() < 1e-12 && r.pose.psi.abs() < 1e-12);

        let shifted: Vec<Point2> = pts.iter().map(|p| [p[0] + 0.1, p[1]]).collect();
        let map = ReferenceMap::new(shifted, 0.05).unwrap();
        let r = icp_align(&pts, &map, Pose2D::identity(), &cfg).unwrap().unwrap();
        assert!((r.pose.x - 0.1).abs() < 1e-6 && r.pose.y.abs() < 1e-6 && r.pose.psi.abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn icp_without_correspondences_is_unavailable() {
        let map = ReferenceMap::new(vec![[0.0, 0.0], [1.0, 0.0]], 0.05).unwrap();
        let far = [[50.0, 50.0], [51.0, 50.0]];
        assert_eq!(icp_align(&far, &map, Pose2D::identity(), &IcpConfig::default()).unwrap(), None);
        assert!(icp_align(&[], &map, Pose2D::identity(), &IcpConfig::default()).is_err());
    }

    #[test]
    fn rigid_fit_recovers_transform() {
        let t = Pose2D::new(0.3, -1.2, 0.4);
        let pairs: Vec<(Point2, Point2)> = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-1.0, 3.0]]
            .iter()
            .map(|&p| (p, t.transform_point(p)))
            .collect();
        let f = fit_rigid(&pairs).unwrap();
        assert!((f.x - t.x).abs() < 1e-12 && (f.y - t.y).abs() < 1e-12 && (f.psi - t.psi).abs() < 1e-12);
    }

    fn square_room() -> Vec<(Point2, Point2)> {
        vec![
            ([-6.0, -4.0], [6.0, -4.0]),
            ([6.0, -4.0], [6.0, 4.0]),
            ([6.0, 4.0], [-6.0, 4.0]),
            ([-6.0, 4.0], [-6.0, -4.0]),
            ([1.0, 0.5], [2.5, 0.5]),
        ]
    }

    fn observe(map: &ReferenceMap, pose: &Pose2D) -> Vec<Point2> {
        map.points()
            .iter()
            .filter(|&&p| dist(p, pose.translation()) < 5.0)
            .step_by(3)
            .map(|&p| pose.inverse_transform_point(p))
            .collect()
    }

    fn drive(n: usize) -> (Vec<Pose2D>, Vec<LocalizationInput>) {
        let dt = 0.05;
        let mut pose = Pose2D::new(-3.0, -1.0, 0.2);
        let mut truth = vec![pose];
        let mut inputs = vec![(0.0, 0.0, 0.0)];
        for k in 1..n {
            let (v, w) = (0.5, 0.15 * ((k as f64) * 0.02).sin());
            let (s, c) = pose.psi.sin_cos();
            pose = Pose2D::new(pose.x + v * dt * c, pose.y + v * dt * s, pose.psi + w * dt);
            truth.push(pose);
            inputs.push((k as f64 * dt, v, w));
        }
        let inputs = inputs
            .into_iter()
            .map(|(t, speed, yaw_rate)| LocalizationInput {
                timestamp: t,
                speed,
                yaw_rate,
                cloud: vec![],
            })
            .collect();
        (truth, inputs)
    }

    #[test]
    fn noiseless_run_tracks_truth() {
        let map = ReferenceMap::from_segments(&square_room(), 0.05).unwrap();
        let (truth, mut inputs) = drive(120);
        for (inp, t) in inputs.iter_mut().zip(&truth) {
            inp.cloud = observe(&map, t);
        }
        let cfg = EkfConfig::default();
        let init = cfg.initial_state(truth[0]).unwrap();
        let rep = localize_trajectory(&inputs, &map, init, &cfg).unwrap();
        assert_eq!(rep.estimates.len(), truth.len());
        for ((_, e), t) in rep.estimates.iter().zip(&truth) {
            assert!(dist(e.translation(), t.translation()) < 1e-6);
            assert!(wrap_angle(e.psi - t.psi).abs() < 1e-6);
        }
    }

    #[test]
    fn no_measurements_is_dead_reckoning() {
        let map = ReferenceMap::from_segments(&square_room(), 0.05).unwrap();
        let (truth, inputs) = drive(80);
        let cfg = EkfConfig::default();
        let rep = localize_trajectory(&inputs, &map, cfg.initial_state(truth[0]).unwrap(), &cfg).unwrap();
        assert_eq!(rep.unavailable, 80);
        for ((_, e), t) in rep.estimates.iter().zip(&truth) {
            assert!(dist(e.translation(), t.translation()) < 1e-12);
        }
    }

    #[test]
    fn map_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.txt");
        let map = ReferenceMap::from_segments(&square_room(), 0.05).unwrap();
        map.save(&path).unwrap();
        let back = ReferenceMap::load(&path).unwrap();
        assert_eq!(back.points(), map.points());
        assert_eq!(back.resolution(), 0.05);
        fs::write(&path, "1 2\nbad\n").unwrap();
        assert!(ReferenceMap::load(&path).is_err());
        assert!(ReferenceMap::new(vec![], 0.05).is_err());
    }

    fn spd() -> impl Strategy<Value = Matrix3<f64>> {
        prop::array::uniform9(-1.0..1.0f64).prop_map(|a| {
            let m = Matrix3::from_row_slice(&a);
            m * m.transpose() + Matrix3::identity() * 0.05
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn covariance_stays_spd(
            p0 in spd(), q in spd(), r in spd(),
            v in -2.0..2.0f64, w in -1.0..1.0f64, psi in -3.0..3.0f64,
            z in prop::array::uniform3(-0.5..0.5f64),
        ) {
            let gate = Chi2Gate::new(3, 0.999999).unwrap();
            let s = EkfState::new(Pose2D::new(0.0, 0.0, psi), p0).unwrap();
            let u = VehicleState::new(Pose2D::identity(), [v, 0.0], w).unwrap();
            let s = ekf_predict(&s, &u, 0.05, &q).unwrap();
            prop_assert!(s.covariance_is_valid());
            let (s, _) = ekf_update(&s, &Pose2D::new(z[0], z[1], psi + z[2]), &r, &gate);
            prop_assert!(s.covariance_is_valid());
        }

        #[test]
        fn gate_is_monotone_in_p_valid(nu in prop::array::uniform3(-4.0..4.0f64), s in spd(), p in 0.95..0.9999f64) {
            let nu = Vector3::from(nu);
            let lo = Chi2Gate::new(3, 0.95).unwrap();
            let hi = Chi2Gate::new(3, p).unwrap();
            if lo.test(&nu, &s).accepted() {
                prop_assert!(hi.test(&nu, &s).accepted());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn icp_is_invariant_to_joint_rigid_pretransform(
            seed in 0u64..1000,
            tx in -3.0..3.0f64, ty in -3.0..3.0f64, tpsi in -3.0..3.0f64,
            ex in -0.15..0.15f64, ey in -0.15..0.15f64, epsi in -0.05..0.05f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = scattered_map(&mut rng, 40);
            let map = ReferenceMap::new(pts.clone(), 0.05).unwrap();
            let init = Pose2D::new(ex, ey, epsi);
            let cfg = IcpConfig::default();
            let a = icp_align(&pts, &map, init, &cfg).unwrap().unwrap();

            let t = Pose2D::new(tx, ty, tpsi);
            let moved: Vec<Point2> = pts.iter().map(|&p| t.transform_point(p)).collect();
            let b = icp_align(&moved, &map, init.compose(&t.inverse()), &cfg).unwrap().unwrap();
            let back = b.pose.compose(&t);
            prop_assert!((back.x - a.pose.x).abs() < 1e-6);
            prop_assert!((back.y - a.pose.y).abs() < 1e-6);
            prop_assert!(wrap_angle(back.psi - a.pose.psi).abs() < 1e-6);
        }
    }
}
