// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Subcommand implementations behind the `radar-enhance` binary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use radar_enhance::config::PipelineConfig;
use radar_enhance::dataset::{dataset_path, Dataset, MAP_FILE, WORLD_FILE};
use radar_enhance::geometry::Point2;
use radar_enhance::gnn::Checkpoint;
use radar_enhance::localization::ReferenceMap;
use radar_enhance::metrics::percentile_nearest_rank;
use radar_enhance::pipeline::{
    evaluate_dataset, labeled_samples, localize_frames, run_pipelined, run_serial, Classifier, CloudReport,
    EnhancedFrame, TrajectoryReport,
};
use radar_enhance::sim::{preset, simulate_trajectory, Scenario};
use radar_enhance::training::{train, EpochMetrics, LabeledSample};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_METRICS_FILE: &str = "train_metrics.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const ENHANCED_FILE: &str = "enhanced.jsonl";
pub const LATENCY_CSV: &str = "latency.csv";
pub const LATENCY_JSON: &str = "latency.json";

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Where the world comes from.
#[derive(Debug, Clone)]
pub enum WorldSource {
    Preset(String),
    File(PathBuf),
}

impl WorldSource {
    pub fn load(&self) -> Result<Scenario> {
        match self {
            WorldSource::Preset(name) => Ok(preset(name)?),
            WorldSource::File(path) => {
                let text =
                    fs::read_to_string(path).with_context(|| format!("cannot read world file {}", path.display()))?;
                Scenario::from_toml(&text).with_context(|| format!("invalid world file {}", path.display()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimArgs {
    pub world: WorldSource,
    pub route: usize,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub frames: usize,
    pub world: String,
    pub files: Vec<PathBuf>,
}

/// Simulate one route and write the dataset, world and map files.
pub fn cmd_sim(args: &SimArgs) -> Result<SimSummary> {
    let cfg = load_config(args.config.as_deref())?;
    let mut scenario = args.world.load()?;
    if let Some(seed) = args.seed {
        scenario.sim.seed = seed;
    }
    let ds = simulate_trajectory(&scenario.world, args.route, &scenario.sim)?;
    ensure_dir(&args.out)?;
    let data = dataset_path(&args.out);
    ds.write(&data)?;
    let world = args.out.join(WORLD_FILE);
    write_file(&world, &scenario.to_toml()?)?;
    let map_path = args.out.join(MAP_FILE);
    scenario.world.reference_map(cfg.map_resolution)?.save(&map_path)?;
    log::info!("wrote {} frames of `{}` to {}", ds.records.len(), scenario.world.name, args.out.display());
    Ok(SimSummary {
        frames: ds.records.len(),
        world: scenario.world.name,
        files: vec![data, world, map_path.clone(), ReferenceMap::meta_path(&map_path)],
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::read(&dataset_path(dir)).with_context(|| format!("cannot load dataset in {}", dir.display()))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub datasets: Vec<PathBuf>,
    pub validation: Vec<PathBuf>,
    pub resume: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub samples: usize,
}

fn samples_from(dirs: &[PathBuf], cfg: &PipelineConfig) -> Result<(Vec<LabeledSample>, BTreeSet<String>)> {
    let mut samples = Vec::new();
    let mut worlds = BTreeSet::new();
    for dir in dirs {
        let ds = load_dataset(dir)?;
        worlds.insert(ds.header.world.clone());
        samples.extend(labeled_samples(&ds, cfg)?);
    }
    Ok((samples, worlds))
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for m in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            opt(m.val_loss),
            opt(m.val_accuracy)
        );
    }
    s
}

/// Train the classifier and write the checkpoint plus per-epoch metrics.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if args.datasets.is_empty() {
        bail!("no training dataset given");
    }
    let (samples, mut worlds) = samples_from(&args.datasets, &cfg)?;
    if samples.is_empty() {
        bail!("training datasets contain no usable frames");
    }
    let (validation, _) = samples_from(&args.validation, &cfg)?;
    let (init, start_epoch) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("cannot resume from {}", path.display()))?;
            worlds.extend(ck.train_worlds.iter().cloned());
            (Some(ck.params), ck.epochs_completed)
        }
        None => (None, 0),
    };
    let outcome = train(&samples, &validation, &cfg.training, init, start_epoch, cfg.graph_radius)?;
    let checkpoint = Checkpoint {
        epochs_completed: start_epoch + cfg.training.epochs,
        train_worlds: worlds.into_iter().collect(),
        ..Checkpoint::new(outcome.params)
    };
    ensure_dir(&args.out)?;
    checkpoint.save(&args.out.join(CHECKPOINT_FILE))?;
    write_file(&args.out.join(TRAIN_METRICS_FILE), &metrics_csv(&outcome.history))?;
    Ok(TrainSummary {
        checkpoint,
        history: outcome.history,
        samples: samples.len(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub datasets: Vec<PathBuf>,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    /// Skip the localization columns.
    pub skip_localization: bool,
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    pub world: String,
    /// `seen` when the checkpoint was trained on this world.
    pub split: String,
    /// `raw`, `naive` or `gnn`.
    pub method: String,
    pub chamfer_mean: f64,
    pub chamfer_tail: f64,
    pub hausdorff_mean: f64,
    pub hausdorff_tail: f64,
    pub node_accuracy: f64,
    pub false_rate: f64,
    pub ate_translation: Option<f64>,
    pub ate_heading: Option<f64>,
    pub rte_translation: Option<f64>,
    pub rte_heading: Option<f64>,
}

impl ReportRow {
    fn new(dataset: &str, world: &str, split: &str, method: &str, c: &CloudReport, t: Option<&TrajectoryReport>) -> Self {
        Self {
            dataset: dataset.into(),
            world: world.into(),
            split: split.into(),
            method: method.into(),
            chamfer_mean: c.chamfer.mean,
            chamfer_tail: c.chamfer.tail,
            hausdorff_mean: c.hausdorff.mean,
            hausdorff_tail: c.hausdorff.tail,
            node_accuracy: c.node_accuracy,
            false_rate: c.false_rate,
            ate_translation: t.map(|t| t.ate_translation.mean),
            ate_heading: t.map(|t| t.ate_heading.mean),
            rte_translation: t.map(|t| t.rte_translation.mean),
            rte_heading: t.map(|t| t.rte_heading.mean),
        }
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "dataset,world,split,method,chamfer_mean,chamfer_tail,hausdorff_mean,hausdorff_tail,node_accuracy,false_rate,ate_translation,ate_heading,rte_translation,rte_heading\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.world,
            r.split,
            r.method,
            r.chamfer_mean,
            r.chamfer_tail,
            r.hausdorff_mean,
            r.hausdorff_tail,
            r.node_accuracy,
            r.false_rate,
            opt(r.ate_translation),
            opt(r.ate_heading),
            opt(r.rte_translation),
            opt(r.rte_heading)
        );
    }
    s
}

fn load_map(dir: &Path) -> Result<ReferenceMap> {
    let path = dir.join(MAP_FILE);
    ReferenceMap::load(&path).with_context(|| format!("cannot load map {}", path.display()))
}

/// Evaluate raw detections, the all-valid pipeline and the trained
/// classifier on each dataset; writes CSV and JSON reports.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<ReportRow>> {
    let cfg = load_config(args.config.as_deref())?;
    let ck = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    if args.datasets.is_empty() {
        bail!("no evaluation dataset given");
    }
    let mut rows = Vec::new();
    for dir in &args.datasets {
        let ds = load_dataset(dir)?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let world = ds.header.world.clone();
        let split = if ck.train_worlds.contains(&world) { "seen" } else { "unseen" };
        let map = if args.skip_localization { None } else { Some(load_map(dir)?) };
        let naive = evaluate_dataset(&ds, &cfg, &Classifier::AllValid)?;
        let gnn = evaluate_dataset(&ds, &cfg, &Classifier::Gnn(ck.params.clone()))?;
        let localize = |frames: &[EnhancedFrame]| -> Result<Option<TrajectoryReport>> {
            match &map {
                Some(m) => Ok(Some(localize_frames(&ds, frames, m, &cfg)?.1)),
                None => Ok(None),
            }
        };
        let naive_traj = localize(&naive.frames)?;
        let gnn_traj = localize(&gnn.frames)?;
        rows.push(ReportRow::new(&name, &world, split, "raw", &naive.raw, None));
        rows.push(ReportRow::new(&name, &world, split, "naive", &naive.enhanced, naive_traj.as_ref()));
        rows.push(ReportRow::new(&name, &world, split, "gnn", &gnn.enhanced, gnn_traj.as_ref()));
    }
    ensure_dir(&args.out)?;
    write_file(&args.out.join(REPORT_CSV), &report_csv(&rows))?;
    write_file(&args.out.join(REPORT_JSON), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct PipelineArgs {
    pub dataset: PathBuf,
    /// Without a checkpoint every node is kept.
    pub checkpoint: Option<PathBuf>,
    pub pipelined: bool,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLatency {
    pub stage: String,
    pub mean_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub frames: usize,
    pub skipped: usize,
    pub latency: Vec<StageLatency>,
}

#[derive(Serialize)]
struct EnhancedRecord<'a> {
    frame_id: u64,
    t: f64,
    nodes: usize,
    kept: usize,
    cloud: &'a [Point2],
}

fn stage_latency(stage: &str, d: &[Duration]) -> Result<StageLatency> {
    let ms: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e3).collect();
    if ms.is_empty() {
        return Ok(StageLatency {
            stage: stage.into(),
            mean_ms: 0.0,
            p99_ms: 0.0,
        });
    }
    Ok(StageLatency {
        stage: stage.into(),
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        p99_ms: percentile_nearest_rank(&ms, 0.99)?,
    })
}

pub fn latency_report(frames: &[EnhancedFrame]) -> Result<Vec<StageLatency>> {
    let pick = |f: fn(&EnhancedFrame) -> Duration| frames.iter().map(f).collect::<Vec<_>>();
    Ok(vec![
        stage_latency("preprocess", &pick(|f| f.timings.preprocess))?,
        stage_latency("graph", &pick(|f| f.timings.graph))?,
        stage_latency("forward", &pick(|f| f.timings.forward))?,
        stage_latency("history", &pick(|f| f.timings.history))?,
        stage_latency("total", &pick(|f| f.timings.total()))?,
    ])
}

/// Replay a dataset through the pipeline, streaming enhanced clouds and
/// per-stage latency statistics to `out`.
pub fn cmd_pipeline(args: &PipelineArgs) -> Result<PipelineSummary> {
    let cfg = load_config(args.config.as_deref())?;
    let classifier = match &args.checkpoint {
        Some(p) => Classifier::Gnn(
            Checkpoint::load(p)
                .with_context(|| format!("cannot load checkpoint {}", p.display()))?
                .params,
        ),
        None => Classifier::AllValid,
    };
    let (ds, skipped) = Dataset::read_lenient(&dataset_path(&args.dataset))
        .with_context(|| format!("cannot load dataset in {}", args.dataset.display()))?;
    if !skipped.is_empty() {
        log::warn!("skipped {} corrupt frame record(s)", skipped.len());
    }
    let frames = if args.pipelined {
        run_pipelined(&ds.records, &cfg, &ds.header.extrinsics, &classifier, 4)?
    } else {
        run_serial(&ds.records, &cfg, &ds.header.extrinsics, &classifier)?
    };
    ensure_dir(&args.out)?;
    let mut text = String::new();
    for f in &frames {
        let rec = EnhancedRecord {
            frame_id: f.frame_id,
            t: f.t,
            nodes: f.nodes.len(),
            kept: f.valid.iter().filter(|&&v| v).count(),
            cloud: &f.cloud,
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    write_file(&args.out.join(ENHANCED_FILE), &text)?;
    let latency = latency_report(&frames)?;
    let mut csv = String::from("stage,mean_ms,p99_ms\n");
    for l in &latency {
        let _ = writeln!(csv, "{},{},{}", l.stage, l.mean_ms, l.p99_ms);
    }
    write_file(&args.out.join(LATENCY_CSV), &csv)?;
    #[derive(Serialize)]
    struct LatencyFile<'a> {
        frames: usize,
        skipped: usize,
        stages: &'a [StageLatency],
    }
    let json = serde_json::to_string_pretty(&LatencyFile {
        frames: frames.len(),
        skipped: skipped.len(),
        stages: &latency,
    })?;
    write_file(&args.out.join(LATENCY_JSON), &(json + "\n"))?;
    Ok(PipelineSummary {
        frames: frames.len(),
        skipped: skipped.len(),
        latency,
    })
}

