// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! One-way Chamfer and Hausdorff distances, trajectory errors and summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, dist_sq, wrap_angle, Point2, Pose2D};
use crate::spatial::KdTree;

/// Per-point distance used inside the Chamfer sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferDistance {
    #[default]
    Euclidean,
    Squared,
}

fn check_sets(radar: &[Point2], lidar: &[Point2]) -> Result<()> {
    if radar.is_empty() {
        return Err(Error::UndefinedMetric("evaluated point set is empty".into()));
    }
    if lidar.is_empty() {
        return Err(Error::UndefinedMetric("reference point set is empty".into()));
    }
    Ok(())
}

/// Nearest-neighbour distance from every radar point to the lidar set, by
/// exhaustive search.
pub fn nearest_distances_brute_force(radar: &[Point2], lidar: &[Point2]) -> Vec<f64> {
    radar
        .iter()
        .map(|&x| lidar.iter().map(|&y| dist_sq(x, y)).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

pub fn nearest_distances(radar: &[Point2], lidar: &KdTree) -> Vec<f64> {
    radar
        .iter()
        .map(|&x| lidar.nearest(x).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

fn chamfer_from(d: &[f64], kind: ChamferDistance) -> f64 {
    let sum: f64 = match kind {
        ChamferDistance::Euclidean => d.iter().sum(),
        ChamferDistance::Squared => d.iter().map(|v| v * v).sum(),
    };
    sum / (2.0 * d.len() as f64)
}

fn max_of(d: &[f64]) -> f64 {
    d.iter().copied().fold(0.0, f64::max)
}

pub fn chamfer_one_way_brute_force(radar: &[Point2], lidar: &[Point2], kind: ChamferDistance) -> Result<f64> {
    check_sets(radar, lidar)?;
    Ok(chamfer_from(&nearest_distances_brute_force(radar, lidar), kind))
}

pub fn hausdorff_one_way_brute_force(radar: &[Point2], lidar: &[Point2]) -> Result<f64> {
    check_sets(radar, lidar)?;
    Ok(max_of(&nearest_distances_brute_force(radar, lidar)))
}

/// `1/(2|radar|) · Σ_x min_y d(x, y)`.
pub fn chamfer_one_way(radar: &[Point2], lidar: &[Point2], kind: ChamferDistance) -> Result<f64> {
    check_sets(radar, lidar)?;
    chamfer_one_way_indexed(radar, &KdTree::new(lidar), kind)
}

pub fn chamfer_one_way_indexed(radar: &[Point2], lidar: &KdTree, kind: ChamferDistance) -> Result<f64> {
    check_sets(radar, lidar.points())?;
    Ok(chamfer_from(&nearest_distances(radar, lidar), kind))
}

pub fn hausdorff_one_way(radar: &[Point2], lidar: &[Point2]) -> Result<f64> {
    check_sets(radar, lidar)?;
    hausdorff_one_way_indexed(radar, &KdTree::new(lidar))
}

pub fn hausdorff_one_way_indexed(radar: &[Point2], lidar: &KdTree) -> Result<f64> {
    check_sets(radar, lidar.points())?;
    Ok(max_of(&nearest_distances(radar, lidar)))
}

/// Estimated and ground-truth poses, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    estimated: Vec<Pose2D>,
    truth: Vec<Pose2D>,
}

impl TrajectoryPair {
    pub fn new(estimated: Vec<Pose2D>, truth: Vec<Pose2D>) -> Result<Self> {
        if estimated.len() != truth.len() {
            return Err(Error::Contract(format!(
                "{} estimated poses for {} ground-truth poses",
                estimated.len(),
                truth.len()
            )));
        }
        Ok(Self { estimated, truth })
    }

    /// Build from timestamped poses; timestamps must agree within half of
    /// `frame_period`.
    pub fn from_timed(estimated: &[(f64, Pose2D)], truth: &[(f64, Pose2D)], frame_period: f64) -> Result<Self> {
        if estimated.len() != truth.len() {
            return Err(Error::Contract(format!(
                "{} estimated poses for {} ground-truth poses",
                estimated.len(),
                truth.len()
            )));
        }
        for (k, (e, t)) in estimated.iter().zip(truth).enumerate() {
            if (e.0 - t.0).abs() > 0.5 * frame_period {
                return Err(Error::Contract(format!(
                    "frame {k}: timestamps {} and {} are not aligned",
                    e.0, t.0
                )));
            }
        }
        Self::new(
            estimated.iter().map(|e| e.1).collect(),
            truth.iter().map(|t| t.1).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn estimated(&self) -> &[Pose2D] {
        &self.estimated
    }

    pub fn truth(&self) -> &[Pose2D] {
        &self.truth
    }
}

/// Per-frame translation (m) and heading (rad) errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryErrors {
    pub translation: Vec<f64>,
    pub heading: Vec<f64>,
}

pub fn ate(pair: &TrajectoryPair) -> TrajectoryErrors {
    let mut out = TrajectoryErrors::default();
    for (e, t) in pair.estimated.iter().zip(&pair.truth) {
        out.translation.push(dist(e.translation(), t.translation()));
        out.heading.push(wrap_angle(e.psi - t.psi).abs());
    }
    out
}

pub fn rte(pair: &TrajectoryPair) -> Result<TrajectoryErrors> {
    if pair.len() < 2 {
        return Err(Error::UndefinedMetric("relative error needs at least two frames".into()));
    }
    let mut out = TrajectoryErrors::default();
    for i in 1..pair.len() {
        let (e0, e1) = (&pair.estimated[i - 1], &pair.estimated[i]);
        let (t0, t1) = (&pair.truth[i - 1], &pair.truth[i]);
        let dx = (e1.x - e0.x) - (t1.x - t0.x);
        let dy = (e1.y - e0.y) - (t1.y - t0.y);
        out.translation.push(dx.hypot(dy));
        let dh = wrap_angle(wrap_angle(e1.psi - e0.psi) - wrap_angle(t1.psi - t0.psi));
        out.heading.push(dh.abs());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Nearest-rank 90th percentile.
    pub tail: f64,
    pub series: Vec<f64>,
}

/// Nearest-rank percentile: the `⌈q·n⌉`-th smallest value.
pub fn percentile_nearest_rank(series: &[f64], q: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::UndefinedMetric("percentile of an empty series".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("percentile {q} outside [0, 1]")));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank - 1])
}

pub fn summarize(series: &[f64]) -> Result<MetricSummary> {
    let tail = percentile_nearest_rank(series, 0.9)?;
    Ok(MetricSummary {
        mean: series.iter().sum::<f64>() / series.len() as f64,
        tail,
        series: series.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: ChamferDistance = ChamferDistance::Euclidean;

    #[test]
    fn chamfer_examples() {
        let a = [[0.0, 0.0], [1.0, 2.0]];
        assert_eq!(chamfer_one_way(&a, &a, E).unwrap(), 0.0);
        assert!((chamfer_one_way(&[[0.0, 0.0]], &[[1.0, 0.0]], E).unwrap() - 0.5).abs() < 1e-15);
        let v = chamfer_one_way(&[[0.0, 0.0], [2.0, 0.0]], &[[0.0, 0.0]], E).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn squared_chamfer_squares_each_term() {
        let v = chamfer_one_way(&[[0.0, 0.0], [2.0, 0.0]], &[[0.0, 0.0]], ChamferDistance::Squared).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_examples() {
        let a = [[0.5, 0.5]];
        assert_eq!(hausdorff_one_way(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff_one_way(&[[0.0, 0.0], [3.0, 0.0]], &[[0.0, 0.0]]).unwrap(), 3.0);
        assert_eq!(hausdorff_one_way(&[[0.0, 0.0]], &[[0.0, 1.0]]).unwrap(), 1.0);
    }

    #[test]
    fn empty_sets_are_undefined() {
        assert!(matches!(chamfer_one_way(&[], &[[0.0, 0.0]], E), Err(Error::UndefinedMetric(_))));
        assert!(matches!(hausdorff_one_way(&[[0.0, 0.0]], &[]), Err(Error::UndefinedMetric(_))));
    }

    fn line(n: usize, f: impl Fn(usize) -> Pose2D) -> Vec<Pose2D> {
        (0..n).map(f).collect()
    }

    #[test]
    fn ate_examples() {
        let truth = line(5, |i| Pose2D::new(i as f64, 0.0, 0.1));
        let same = ate(&TrajectoryPair::new(truth.clone(), truth.clone()).unwrap());
        assert!(same.translation.iter().chain(&same.heading).all(|&v| v == 0.0));

        let shifted = line(5, |i| Pose2D::new(i as f64, 1.0, 0.1));
        let e = ate(&TrajectoryPair::new(shifted, truth).unwrap());
        assert!(e.translation.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let a = TrajectoryPair::new(
            vec![Pose2D::new(0.0, 0.0, 179f64.to_radians())],
            vec![Pose2D::new(0.0, 0.0, (-179f64).to_radians())],
        )
        .unwrap();
        assert!((ate(&a).heading[0] - 2f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn rte_examples() {
        let truth = line(6, |i| Pose2D::new(0.5 * i as f64, 0.0, 0.0));
        let offset = line(6, |i| Pose2D::new(0.5 * i as f64 + 3.0, -2.0, 0.0));
        let e = rte(&TrajectoryPair::new(offset, truth.clone()).unwrap()).unwrap();
        assert_eq!(e.translation.len(), 5);
        assert!(e.translation.iter().all(|&v| v.abs() < 1e-12));

        let drift = line(6, |i| Pose2D::new(0.5 * i as f64 + 0.01 * i as f64, 0.0, 0.0));
        let e = rte(&TrajectoryPair::new(drift, truth).unwrap()).unwrap();
        assert!(e.translation.iter().all(|&v| (v - 0.01).abs() < 1e-12));

        let one = TrajectoryPair::new(vec![Pose2D::identity()], vec![Pose2D::identity()]).unwrap();
        assert!(rte(&one).is_err());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(TrajectoryPair::new(vec![Pose2D::identity()], vec![]).is_err());
        let a = [(0.0, Pose2D::identity()), (0.05, Pose2D::identity())];
        let b = [(0.0, Pose2D::identity()), (0.08, Pose2D::identity())];
        assert!(TrajectoryPair::from_timed(&a, &b, 0.05).is_err());
        assert!(TrajectoryPair::from_timed(&a, &a, 0.05).is_ok());
        assert!(TrajectoryPair::from_timed(&a, &b[..1], 0.05).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[2.5; 7]).unwrap();
        assert_eq!((s.mean, s.tail), (2.5, 2.5));
        let series: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(summarize(&series).unwrap().tail, 9.0);
        let s = summarize(&[4.0]).unwrap();
        assert_eq!((s.mean, s.tail), (4.0, 4.0));
        assert!(summarize(&[]).is_err());
    }

    fn cloud() -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| [x, y]), 1..60)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn self_distance_is_zero(a in cloud()) {
            prop_assert_eq!(chamfer_one_way(&a, &a, E).unwrap(), 0.0);
            prop_assert_eq!(hausdorff_one_way(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn rigid_transform_invariance(a in cloud(), b in cloud(), x in -10.0..10.0f64, y in -10.0..10.0f64, t in -3.0..3.0f64) {
            let p = Pose2D::new(x, y, t);
            let ta: Vec<Point2> = a.iter().map(|&q| p.transform_point(q)).collect();
            let tb: Vec<Point2> = b.iter().map(|&q| p.transform_point(q)).collect();
            let c0 = chamfer_one_way(&a, &b, E).unwrap();
            let c1 = chamfer_one_way(&ta, &tb, E).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-9);
            let h0 = hausdorff_one_way(&a, &b).unwrap();
            let h1 = hausdorff_one_way(&ta, &tb).unwrap();
            prop_assert!((h0 - h1).abs() < 1e-9);
        }

        #[test]
        fn hausdorff_bounds_unhalved_mean(a in cloud(), b in cloud()) {
            let h = hausdorff_one_way(&a, &b).unwrap();
            let c = chamfer_one_way(&a, &b, E).unwrap();
            prop_assert!(h + 1e-12 >= 2.0 * c);
        }

        #[test]
        fn indexed_matches_brute_force(a in cloud(), b in cloud()) {
            for kind in [ChamferDistance::Euclidean, ChamferDistance::Squared] {
                prop_assert_eq!(
                    chamfer_one_way(&a, &b, kind).unwrap(),
                    chamfer_one_way_brute_force(&a, &b, kind).unwrap()
                );
            }
            prop_assert_eq!(hausdorff_one_way(&a, &b).unwrap(), hausdorff_one_way_brute_force(&a, &b).unwrap());
        }
    }
}
