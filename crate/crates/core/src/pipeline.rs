// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Per-frame enhancement chain (preprocess, graph, classify, history) and the
//! dataset-level helpers built on it: training samples, cloud-quality and
//! localization evaluation.

use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{Dataset, FrameRecord};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2D, SensorExtrinsics};
use crate::gnn::{build_graph, classify, model_forward, ModelParams, RadarGraph};
use crate::history::DetectionHistory;
use crate::localization::{localize_trajectory, LocalizationInput, LocalizationReport, ReferenceMap};
use crate::metrics::{
    ate, chamfer_one_way_indexed, hausdorff_one_way_indexed, rte, summarize, MetricSummary, TrajectoryPair,
};
use crate::preprocess::{preprocess_scan, GridNode, OccupancyGrid};
use crate::spatial::KdTree;
use crate::training::{label_nodes_with, LabeledSample};

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Gnn(ModelParams),
    /// Keeps every node; the unfiltered baseline.
    AllValid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub preprocess: Duration,
    pub graph: Duration,
    pub forward: Duration,
    pub history: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.preprocess + self.graph + self.forward + self.history
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFrame {
    pub frame_id: u64,
    pub t: f64,
    /// Dead-reckoned pose the frame was aligned with.
    pub pose: Pose2D,
    pub nodes: Vec<GridNode>,
    /// Empty for the all-valid classifier.
    pub probabilities: Vec<f64>,
    pub valid: Vec<bool>,
    /// Static detections of this scan, vehicle frame.
    pub raw_static: Vec<Point2>,
    /// History cloud in the current vehicle frame.
    pub cloud: Vec<Point2>,
    pub timings: StageTimings,
}

fn checked_params(classifier: &Classifier) -> Result<()> {
    if let Classifier::Gnn(p) = classifier {
        p.validate()?;
    }
    Ok(())
}

/// Front half of the chain: fusion, filtering and the occupancy grid.
struct GridStage {
    cfg: PipelineConfig,
    extrinsics: SensorExtrinsics,
    grid: OccupancyGrid,
}

struct GridOutput {
    frame_id: u64,
    t: f64,
    pose: Pose2D,
    nodes: Vec<GridNode>,
    raw_static: Vec<Point2>,
    elapsed: Duration,
}

impl GridStage {
    fn run(&mut self, rec: &FrameRecord) -> Result<GridOutput> {
        let start = Instant::now();
        let pose = rec.vehicle.pose;
        let fused = preprocess_scan(&rec.radar, &self.extrinsics, &rec.vehicle, &self.cfg.preprocess)?;
        self.grid.update(&fused.static_detections, pose);
        let nodes = self.grid.extract_nodes();
        let raw_static = fused.static_detections.iter().map(|d| d.position()).collect();
        Ok(GridOutput {
            frame_id: rec.frame_id,
            t: rec.t,
            pose,
            nodes,
            raw_static,
            elapsed: start.elapsed(),
        })
    }
}

struct ClassifyOutput {
    grid: GridOutput,
    probabilities: Vec<f64>,
    valid: Vec<bool>,
    graph_time: Duration,
    forward_time: Duration,
}

fn classify_nodes(
    classifier: &Classifier,
    radius: f64,
    threshold: f64,
    grid: GridOutput,
) -> Result<ClassifyOutput> {
    let start = Instant::now();
    let graph: Option<RadarGraph> = match classifier {
        Classifier::Gnn(_) => Some(build_graph(grid.nodes.clone(), radius)?),
        Classifier::AllValid => None,
    };
    let graph_time = start.elapsed();
    let start = Instant::now();
    let (probabilities, valid) = match (classifier, &graph) {
        (Classifier::Gnn(params), Some(g)) => {
            let p = model_forward(params, g)?;
            let v = classify(&p, threshold);
            (p, v)
        }
        _ => (vec![], vec![true; grid.nodes.len()]),
    };
    Ok(ClassifyOutput {
        grid,
        probabilities,
        valid,
        graph_time,
        forward_time: start.elapsed(),
    })
}

struct HistoryStage {
    history: DetectionHistory,
}

impl HistoryStage {
    fn run(&mut self, c: ClassifyOutput) -> Result<EnhancedFrame> {
        let start = Instant::now();
        let kept: Vec<Point2> = c
            .grid
            .nodes
            .iter()
            .zip(&c.valid)
            .filter(|(_, &v)| v)
            .map(|(n, _)| [n[0], n[1]])
            .collect();
        self.history.push(&kept, c.grid.pose, c.grid.frame_id)?;
        let cloud = self.history.cloud(c.grid.pose);
        let history_time = start.elapsed();
        Ok(EnhancedFrame {
            frame_id: c.grid.frame_id,
            t: c.grid.t,
            pose: c.grid.pose,
            nodes: c.grid.nodes,
            probabilities: c.probabilities,
            valid: c.valid,
            raw_static: c.grid.raw_static,
            cloud,
            timings: StageTimings {
                preprocess: c.grid.elapsed,
                graph: c.graph_time,
                forward: c.forward_time,
                history: history_time,
            },
        })
    }
}

/// Stateful serial pipeline; feed frames in order.
pub struct EnhancementPipeline {
    grid: GridStage,
    classifier: Classifier,
    history: HistoryStage,
}

impl EnhancementPipeline {
    pub fn new(cfg: &PipelineConfig, extrinsics: SensorExtrinsics, classifier: Classifier) -> Result<Self> {
        cfg.validate()?;
        checked_params(&classifier)?;
        Ok(Self {
            grid: GridStage {
                cfg: cfg.clone(),
                extrinsics,
                grid: OccupancyGrid::new(cfg.grid)?,
            },
            classifier,
            history: HistoryStage {
                history: DetectionHistory::new(cfg.history_length)?,
            },
        })
    }

    pub fn process(&mut self, rec: &FrameRecord) -> Result<EnhancedFrame> {
        let g = self.grid.run(rec)?;
        let cfg = &self.grid.cfg;
        let c = classify_nodes(&self.classifier, cfg.graph_radius, cfg.decision_threshold, g)?;
        self.history.run(c)
    }
}

/// Run every record through a fresh serial pipeline.
pub fn run_serial(
    records: &[FrameRecord],
    cfg: &PipelineConfig,
    extrinsics: &SensorExtrinsics,
    classifier: &Classifier,
) -> Result<Vec<EnhancedFrame>> {
    let mut p = EnhancementPipeline::new(cfg, extrinsics.clone(), classifier.clone())?;
    records.iter().map(|r| p.process(r)).collect()
}

/// Same output as [`run_serial`], with the three stage groups on separate
/// threads joined by bounded queues.
pub fn run_pipelined(
    records: &[FrameRecord],
    cfg: &PipelineConfig,
    extrinsics: &SensorExtrinsics,
    classifier: &Classifier,
    queue_depth: usize,
) -> Result<Vec<EnhancedFrame>> {
    cfg.validate()?;
    checked_params(classifier)?;
    let depth = queue_depth.max(1);
    let mut grid = GridStage {
        cfg: cfg.clone(),
        extrinsics: extrinsics.clone(),
        grid: OccupancyGrid::new(cfg.grid)?,
    };
    let mut history = HistoryStage {
        history: DetectionHistory::new(cfg.history_length)?,
    };
    let (tx1, rx1) = sync_channel::<Result<GridOutput>>(depth);
    let (tx2, rx2) = sync_channel::<Result<ClassifyOutput>>(depth);
    std::thread::scope(|s| {
        s.spawn(move || {
            for r in records {
                let out = grid.run(r);
                let failed = out.is_err();
                if tx1.send(out).is_err() || failed {
                    break;
                }
            }
        });
        s.spawn(move || {
            for g in rx1 {
                let out = g.and_then(|g| classify_nodes(classifier, cfg.graph_radius, cfg.decision_threshold, g));
                let failed = out.is_err();
                if tx2.send(out).is_err() || failed {
                    break;
                }
            }
        });
        rx2.into_iter().map(|c| c.and_then(|c| history.run(c))).collect()
    })
}

/// Labelled graphs from every `stride`-th frame with at least one node.
pub fn labeled_samples(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let mut stage = GridStage {
        cfg: cfg.clone(),
        extrinsics: dataset.header.extrinsics.clone(),
        grid: OccupancyGrid::new(cfg.grid)?,
    };
    let stride = cfg.training.sample_stride;
    let mut out = Vec::new();
    for (k, rec) in dataset.records.iter().enumerate() {
        let g = stage.run(rec)?;
        if k % stride != 0 || g.nodes.is_empty() || rec.lidar.is_empty() {
            continue;
        }
        let tree = KdTree::new(&rec.lidar);
        let labels = label_nodes_with(&g.nodes, &tree, cfg.training.label_tolerance);
        let graph = build_graph(g.nodes, cfg.graph_radius)?;
        out.push(LabeledSample::new(graph, labels, rec.frame_id, dataset.header.world.clone())?);
    }
    Ok(out)
}

/// Cloud-quality results of one classifier over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudReport {
    pub chamfer: MetricSummary,
    pub hausdorff: MetricSummary,
    /// Fraction of nodes whose decision matches the lidar label.
    pub node_accuracy: f64,
    /// Fraction of kept nodes that are labelled invalid.
    pub false_rate: f64,
    pub frames_scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    pub frames: Vec<EnhancedFrame>,
    pub enhanced: CloudReport,
    /// Per-scan static detections, before the grid.
    pub raw: CloudReport,
}

/// Run the pipeline over `dataset` and score every frame against its lidar
/// scan. Frames with an empty cloud or scan are not scored.
pub fn evaluate_dataset(dataset: &Dataset, cfg: &PipelineConfig, classifier: &Classifier) -> Result<DatasetEvaluation> {
    let frames = run_serial(&dataset.records, cfg, &dataset.header.extrinsics, classifier)?;
    let tol = cfg.training.label_tolerance;
    let kind = cfg.chamfer_distance;
    let (mut ch, mut hd, mut raw_ch, mut raw_hd) = (vec![], vec![], vec![], vec![]);
    let (mut correct, mut nodes, mut kept, mut kept_bad) = (0usize, 0usize, 0usize, 0usize);
    let (mut raw_total, mut raw_bad) = (0usize, 0usize);
    for (f, rec) in frames.iter().zip(&dataset.records) {
        if rec.lidar.is_empty() {
            continue;
        }
        let tree = KdTree::new(&rec.lidar);
        let labels = label_nodes_with(&f.nodes, &tree, tol);
        for (&v, &y) in f.valid.iter().zip(&labels) {
            correct += (v == y) as usize;
            nodes += 1;
            if v {
                kept += 1;
                kept_bad += (!y) as usize;
            }
        }
        if !f.cloud.is_empty() {
            ch.push(chamfer_one_way_indexed(&f.cloud, &tree, kind)?);
            hd.push(hausdorff_one_way_indexed(&f.cloud, &tree)?);
        }
        if !f.raw_static.is_empty() {
            raw_ch.push(chamfer_one_way_indexed(&f.raw_static, &tree, kind)?);
            raw_hd.push(hausdorff_one_way_indexed(&f.raw_static, &tree)?);
            let raw_nodes: Vec<GridNode> = f.raw_static.iter().map(|p| [p[0], p[1], 0.0, 0.0]).collect();
            let l = label_nodes_with(&raw_nodes, &tree, tol);
            raw_total += l.len();
            raw_bad += l.iter().filter(|&&y| !y).count();
        }
    }
    if ch.is_empty() {
        return Err(Error::UndefinedMetric("no frame produced a non-empty cloud".into()));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let enhanced = CloudReport {
        frames_scored: ch.len(),
        chamfer: summarize(&ch)?,
        hausdorff: summarize(&hd)?,
        node_accuracy: ratio(correct, nodes),
        false_rate: ratio(kept_bad, kept),
    };
    let raw = CloudReport {
        frames_scored: raw_ch.len(),
        chamfer: summarize(&raw_ch)?,
        hausdorff: summarize(&raw_hd)?,
        node_accuracy: 1.0 - ratio(raw_bad, raw_total),
        false_rate: ratio(raw_bad, raw_total),
    };
    Ok(DatasetEvaluation { frames, enhanced, raw })
}

/// Trajectory errors of one localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub ate_translation: MetricSummary,
    pub ate_heading: MetricSummary,
    pub rte_translation: MetricSummary,
    pub rte_heading: MetricSummary,
    pub accepted: usize,
    pub rejected: usize,
    pub unavailable: usize,
}

/// Localize against `map` with the enhanced clouds of `frames`, starting from
/// the first ground-truth pose.
pub fn localize_frames(
    dataset: &Dataset,
    frames: &[EnhancedFrame],
    map: &ReferenceMap,
    cfg: &PipelineConfig,
) -> Result<(LocalizationReport, TrajectoryReport)> {
    if frames.len() != dataset.records.len() || frames.is_empty() {
        return Err(Error::Contract("one enhanced frame per record is required".into()));
    }
    let inputs: Vec<LocalizationInput> = dataset
        .records
        .iter()
        .zip(frames)
        .map(|(r, f)| LocalizationInput {
            timestamp: r.t,
            speed: r.vehicle.v[0],
            yaw_rate: r.vehicle.yaw_rate,
            cloud: f.cloud.clone(),
        })
        .collect();
    let init = cfg.ekf.initial_state(dataset.records[0].truth)?;
    let rep = localize_trajectory(&inputs, map, init, &cfg.ekf)?;
    let pair = TrajectoryPair::new(
        rep.estimates.iter().map(|e| e.1).collect(),
        dataset.records.iter().map(|r| r.truth).collect(),
    )?;
    let a = ate(&pair);
    let (rte_t, rte_h) = if pair.len() >= 2 {
        let r = rte(&pair)?;
        (r.translation, r.heading)
    } else {
        (vec![0.0], vec![0.0])
    };
    let traj = TrajectoryReport {
        ate_translation: summarize(&a.translation)?,
        ate_heading: summarize(&a.heading)?,
        rte_translation: summarize(&rte_t)?,
        rte_heading: summarize(&rte_h)?,
        accepted: rep.accepted,
        rejected: rep.rejected,
        unavailable: rep.unavailable,
    };
    Ok((rep, traj))
}

/// Dead-reckoning errors of the recorded odometry alone.
pub fn odometry_errors(dataset: &Dataset) -> Result<TrajectoryReport> {
    let pair = TrajectoryPair::new(
        dataset.records.iter().map(|r| r.vehicle.pose).collect(),
        dataset.records.iter().map(|r| r.truth).collect(),
    )?;
    let a = ate(&pair);
    let r = rte(&pair)?;
    Ok(TrajectoryReport {
        ate_translation: summarize(&a.translation)?,
        ate_heading: summarize(&a.heading)?,
        rte_translation: summarize(&r.translation)?,
        rte_heading: summarize(&r.heading)?,
        accepted: 0,
        rejected: 0,
        unavailable: dataset.records.len(),
    })
}
