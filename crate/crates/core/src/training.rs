// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Node labelling, augmentation, loss, backpropagation and the training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gnn::{build_graph, forward_traced, sigmoid, ModelParams, NodeFeatures, RadarGraph, DEFAULT_DIMS};
use crate::spatial::KdTree;

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub graph: RadarGraph,
    /// `true` = valid return.
    pub labels: Vec<bool>,
    pub frame_id: u64,
    pub environment: String,
}

impl LabeledSample {
    pub fn new(graph: RadarGraph, labels: Vec<bool>, frame_id: u64, environment: impl Into<String>) -> Result<Self> {
        if graph.node_count() != labels.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} nodes",
                labels.len(),
                graph.node_count()
            )));
        }
        Ok(Self {
            graph,
            labels,
            frame_id,
            environment: environment.into(),
        })
    }
}

/// A node is valid iff some lidar point lies within `tol` of it.
pub fn label_nodes(nodes: &[NodeFeatures], lidar: &[Point2], tol: f64) -> Vec<bool> {
    if lidar.is_empty() {
        return vec![false; nodes.len()];
    }
    let tree = KdTree::new(lidar);
    label_nodes_with(nodes, &tree, tol)
}

pub fn label_nodes_with(nodes: &[NodeFeatures], lidar: &KdTree, tol: f64) -> Vec<bool> {
    nodes
        .iter()
        .map(|n| lidar.nearest([n[0], n[1]]).is_some_and(|(_, d2)| d2.sqrt() <= tol))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Random global yaw in `[0, 2π)`.
    pub rotation: bool,
    /// Std-dev of additive noise on `p_det`.
    pub p_det_sigma: f64,
    /// Std-dev of additive noise on x and y (m).
    pub position_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation: true,
            p_det_sigma: 0.05,
            position_sigma: 0.16,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Concrete random draws for one augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub angle: f64,
    pub p_noise: Vec<f64>,
    pub xy_noise: Vec<[f64; 2]>,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(n: usize, cfg: &AugmentConfig, rng: &mut R) -> Self {
        let angle = if cfg.rotation {
            rng.random_range(0.0..std::f64::consts::TAU)
        } else {
            0.0
        };
        let gauss = |rng: &mut R, sigma: f64| -> f64 {
            if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
            } else {
                0.0
            }
        };
        let p_noise = (0..n).map(|_| gauss(rng, cfg.p_det_sigma)).collect();
        let xy_noise = (0..n)
            .map(|_| [gauss(rng, cfg.position_sigma), gauss(rng, cfg.position_sigma)])
            .collect();
        Self {
            angle,
            p_noise,
            xy_noise,
        }
    }
}

/// Rotate about the origin, jitter `p_det` (clamped to [0, 1]) and positions,
/// then rebuild edges. Labels are untouched.
pub fn apply_augmentation(sample: &LabeledSample, draw: &AugmentDraw, radius: f64) -> Result<LabeledSample> {
    let n = sample.graph.node_count();
    if draw.p_noise.len() != n || draw.xy_noise.len() != n {
        return Err(Error::Contract("augmentation draw does not match node count".into()));
    }
    let (s, c) = draw.angle.sin_cos();
    let nodes: Vec<NodeFeatures> = sample
        .graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = c * v[0] - s * v[1] + draw.xy_noise[k][0];
            let y = s * v[0] + c * v[1] + draw.xy_noise[k][1];
            let p = (v[3] + draw.p_noise[k]).clamp(0.0, 1.0);
            [x, y, v[2], p]
        })
        .collect();
    Ok(LabeledSample {
        graph: build_graph(nodes, radius)?,
        labels: sample.labels.clone(),
        frame_id: sample.frame_id,
        environment: sample.environment.clone(),
    })
}

pub fn augment_sample<R: Rng + ?Sized>(
    sample: &LabeledSample,
    cfg: &AugmentConfig,
    radius: f64,
    rng: &mut R,
) -> Result<LabeledSample> {
    let draw = AugmentDraw::sample(sample.graph.node_count(), cfg, rng);
    apply_augmentation(sample, &draw, radius)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
/// `pos_weight` scales the positive-class term.
pub fn bce_loss(probs: &[f64], labels: &[bool], pos_weight: f64) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                -pos_weight * p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

pub fn accuracy(probs: &[f64], labels: &[bool], threshold: f64) -> f64 {
    if probs.is_empty() {
        return 1.0;
    }
    let correct = probs.iter().zip(labels).filter(|(&p, &y)| (p >= threshold) == y).count();
    correct as f64 / probs.len() as f64
}

/// Loss and exact parameter gradient for one sample.
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub gradient: ModelParams,
}

fn add_outer(dst: &mut [f64], delta: &[f64], x: &[f64]) {
    let in_dim = x.len();
    for (o, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut dst[o * in_dim..(o + 1) * in_dim];
        row.iter_mut().zip(x).for_each(|(w, &xi)| *w += d * xi);
    }
}

/// Backpropagate the BCE loss of `model_forward(params, graph)` against the
/// sample labels.
pub fn backward(params: &ModelParams, sample: &LabeledSample, pos_weight: f64) -> Result<GradientResult> {
    params.validate()?;
    let graph = &sample.graph;
    let n = graph.node_count();
    if sample.labels.len() != n {
        return Err(Error::Contract("label count does not match node count".into()));
    }
    let (logits, traces) = forward_traced(params, graph)?;
    let probabilities: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = bce_loss(&probabilities, &sample.labels, pos_weight);
    let mut gradient = ModelParams::zeros(&params.dims());
    if n == 0 {
        return Ok(GradientResult {
            loss,
            probabilities,
            gradient,
        });
    }

    // dL/dz for the output logit; zero where the clamp is active
    let inv_n = 1.0 / n as f64;
    let mut delta: Vec<f64> = probabilities
        .iter()
        .zip(&sample.labels)
        .map(|(&p, &y)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                0.0
            } else if y {
                -pos_weight * (1.0 - p) * inv_n
            } else {
                p * inv_n
            }
        })
        .collect();

    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let trace = &traces[k];
        let (din, dout) = (layer.in_dim, layer.out_dim);
        let grad = &mut gradient.layers[k];

        for i in 0..n {
            let d = &delta[i * dout..(i + 1) * dout];
            add_outer(&mut grad.w_self, d, &trace.input[i * din..(i + 1) * din]);
            grad.bias.iter_mut().zip(d).for_each(|(b, &di)| *b += di);
        }

        // spread[j] = Σ_{i ∈ N(j)} δ_i / deg(i): what node j's features
        // contributed through its neighbours' means
        let need_input_grad = k > 0;
        let spread = if need_input_grad || trace.aggregate.is_none() {
            let mut s = vec![0.0; n * dout];
            for i in 0..n {
                let deg = graph.degree(i);
                if deg == 0 {
                    continue;
                }
                let inv = 1.0 / deg as f64;
                let d = &delta[i * dout..(i + 1) * dout];
                for &j in graph.neighbors(i) {
                    s[j * dout..(j + 1) * dout]
                        .iter_mut()
                        .zip(d)
                        .for_each(|(a, &di)| *a += di * inv);
                }
            }
            Some(s)
        } else {
            None
        };

        match (&trace.aggregate, &spread) {
            (Some(agg), _) => {
                for i in 0..n {
                    add_outer(
                        &mut grad.w_neigh,
                        &delta[i * dout..(i + 1) * dout],
                        &agg[i * din..(i + 1) * din],
                    );
                }
            }
            (None, Some(s)) => {
                for j in 0..n {
                    add_outer(&mut grad.w_neigh, &s[j * dout..(j + 1) * dout], &trace.input[j * din..(j + 1) * din]);
                }
            }
            (None, None) => unreachable!("spread is computed whenever the aggregate is missing"),
        }

        if !need_input_grad {
            break;
        }
        let s = spread.expect("computed for inner layers");
        let prev_pre = &traces[k - 1].pre_activation;
        let mut next = vec![0.0; n * din];
        for j in 0..n {
            let out = &mut next[j * din..(j + 1) * din];
            let dj = &delta[j * dout..(j + 1) * dout];
            let sj = &s[j * dout..(j + 1) * dout];
            for o in 0..dout {
                let (a, b) = (dj[o], sj[o]);
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                let ws = &layer.w_self[o * din..(o + 1) * din];
                let wn = &layer.w_neigh[o * din..(o + 1) * din];
                for c in 0..din {
                    out[c] += ws[c] * a + wn[c] * b;
                }
            }
            // ReLU of the previous block
            for c in 0..din {
                if prev_pre[j * din + c] <= 0.0 {
                    out[c] = 0.0;
                }
            }
        }
        delta = next;
    }

    Ok(GradientResult {
        loss,
        probabilities,
        gradient,
    })
}

/// Sum of per-sample gradients.
pub fn batch_gradient(params: &ModelParams, samples: &[LabeledSample], pos_weight: f64) -> Result<ModelParams> {
    let mut total = ModelParams::zeros(&params.dims());
    for s in samples {
        let g = backward(params, s, pos_weight)?.gradient;
        total.values_mut().zip(g.values()).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub pos_weight: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Node-to-lidar distance for a valid label (m).
    pub label_tolerance: f64,
    /// Use every n-th frame of a dataset as a sample.
    pub sample_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            pos_weight: 1.0,
            seed: 0,
            augment: AugmentConfig::default(),
            label_tolerance: 0.20,
            sample_stride: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Config(format!("training.{what} out of range: {v}"));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(bad("beta1", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta2", self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return Err(bad("adam_eps", self.adam_eps));
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return Err(bad("pos_weight", self.pos_weight));
        }
        if !(self.label_tolerance > 0.0 && self.label_tolerance.is_finite()) {
            return Err(bad("label_tolerance", self.label_tolerance));
        }
        if self.sample_stride == 0 {
            return Err(Error::Config("training.sample_stride must be >= 1".into()));
        }
        let a = &self.augment;
        if !(a.p_det_sigma >= 0.0 && a.position_sigma >= 0.0) {
            return Err(Error::Config("training.augment sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, g)) in params.values_mut().zip(grad.values()).enumerate() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochMetrics>,
}

/// Mean loss and node accuracy of `params` over `samples`.
pub fn evaluate_samples(params: &ModelParams, samples: &[LabeledSample], cfg: &TrainConfig, threshold: f64) -> Result<(f64, f64)> {
    let (mut loss, mut correct, mut nodes) = (0.0, 0usize, 0usize);
    for s in samples {
        let p = crate::gnn::model_forward(params, &s.graph)?;
        loss += bce_loss(&p, &s.labels, cfg.pos_weight);
        correct += p.iter().zip(&s.labels).filter(|(&pi, &y)| (pi >= threshold) == y).count();
        nodes += p.len();
    }
    let n = samples.len().max(1) as f64;
    Ok((loss / n, if nodes == 0 { 1.0 } else { correct as f64 / nodes as f64 }))
}

/// Train with one optimizer step per sample. Epochs are numbered from
/// `start_epoch + 1`. Fully deterministic for a given seed.
pub fn train(
    dataset: &[LabeledSample],
    validation: &[LabeledSample],
    cfg: &TrainConfig,
    init: Option<ModelParams>,
    start_epoch: usize,
    graph_radius: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = match init {
        Some(p) => {
            p.validate()?;
            p
        }
        None => ModelParams::init(&DEFAULT_DIMS, &mut rng),
    };
    let mut adam = Adam::new(params.values().count());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for e in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut nodes) = (0.0, 0usize, 0usize);
        for &idx in &order {
            let augmented;
            let sample = if cfg.augment.enabled {
                augmented = augment_sample(&dataset[idx], &cfg.augment, graph_radius, &mut rng)?;
                &augmented
            } else {
                &dataset[idx]
            };
            let r = backward(&params, sample, cfg.pos_weight)?;
            loss_sum += r.loss;
            correct += r
                .probabilities
                .iter()
                .zip(&sample.labels)
                .filter(|(&p, &y)| (p >= 0.5) == y)
                .count();
            nodes += r.probabilities.len();
            match cfg.optimizer {
                OptimizerKind::Adam => adam.step(&mut params, &r.gradient, cfg),
                OptimizerKind::Sgd => params
                    .values_mut()
                    .zip(r.gradient.values())
                    .for_each(|(p, g)| *p -= cfg.learning_rate * g),
            }
        }
        let (val_loss, val_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_samples(&params, validation, cfg, 0.5)?;
            (Some(l), Some(a))
        };
        let m = EpochMetrics {
            epoch: start_epoch + e + 1,
            train_loss: loss_sum / dataset.len() as f64,
            train_accuracy: if nodes == 0 { 1.0 } else { correct as f64 / nodes as f64 },
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {} train_loss {:.4} train_acc {:.4} val_loss {:?} val_acc {:?}",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy
        );
        history.push(m);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model_forward;
    use proptest::prelude::*;
    use rand::Rng;

    fn node(x: f64, y: f64, p: f64) -> NodeFeatures {
        [x, y, 0.0, p]
    }

    fn random_sample(seed: u64, n: usize) -> LabeledSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<NodeFeatures> = (0..n)
            .map(|_| node(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..1.0)))
            .collect();
        let labels = (0..n).map(|_| rng.random_bool(0.4)).collect();
        LabeledSample::new(build_graph(nodes, 6.0).unwrap(), labels, seed, "test").unwrap()
    }

    #[test]
    fn labels_use_inclusive_tolerance() {
        let lidar = vec![[0.0, 0.0], [5.0, 5.0]];
        let nodes = vec![node(0.0, 0.0, 0.1), node(0.19, 0.0, 0.1), node(5.0, 5.21, 0.1)];
        assert_eq!(label_nodes(&nodes, &lidar, 0.20), vec![true, true, false]);
        assert_eq!(label_nodes(&nodes, &[], 0.20), vec![false; 3]);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(&[1.0 - BCE_EPS], &[true], 1.0) < 1e-6);
        let l = bce_loss(&[0.5, 0.5, 0.5], &[true, false, true], 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = bce_loss(&[BCE_EPS], &[true], 1.0);
        assert!((l - 16.118).abs() < 1e-3, "{l}");
        // clamp applies below epsilon too
        assert_eq!(bce_loss(&[0.0], &[true], 1.0), l);
    }

    #[test]
    fn identity_augmentation() {
        let s = random_sample(1, 8);
        let draw = AugmentDraw {
            angle: 0.0,
            p_noise: vec![0.0; 8],
            xy_noise: vec![[0.0; 2]; 8],
        };
        let a = apply_augmentation(&s, &draw, 6.0).unwrap();
        assert_eq!(a.graph.nodes(), s.graph.nodes());
        assert_eq!(a.labels, s.labels);
        let full = AugmentDraw {
            angle: std::f64::consts::TAU,
            ..draw
        };
        let a = apply_augmentation(&s, &full, 6.0).unwrap();
        for (u, v) in a.graph.nodes().iter().zip(s.graph.nodes()) {
            assert!((u[0] - v[0]).abs() < 1e-9 && (u[1] - v[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn p_det_noise_is_clamped() {
        let s = random_sample(2, 6);
        let draw = AugmentDraw {
            angle: 0.0,
            p_noise: vec![5.0, -5.0, 5.0, -5.0, 5.0, -5.0],
            xy_noise: vec![[0.0; 2]; 6],
        };
        let a = apply_augmentation(&s, &draw, 6.0).unwrap();
        let p: Vec<f64> = a.graph.nodes().iter().map(|n| n[3]).collect();
        assert_eq!(p, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ModelParams::init(&DEFAULT_DIMS, &mut rng);
        let s = random_sample(9, 7);
        let one = batch_gradient(&params, std::slice::from_ref(&s), 1.0).unwrap();
        let two = batch_gradient(&params, &[s.clone(), s], 1.0).unwrap();
        for (a, b) in one.values().zip(two.values()) {
            assert!((2.0 * a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn saturated_fit_has_zero_gradient() {
        // bias alone drives every logit far past the clamp
        let mut params = ModelParams::default();
        params.layers[2].bias[0] = 40.0;
        let nodes = vec![node(0.0, 1.0, 0.5), node(2.0, 0.0, 0.2)];
        let s = LabeledSample::new(build_graph(nodes, 10.0).unwrap(), vec![true, true], 0, "t").unwrap();
        let r = backward(&params, &s, 1.0).unwrap();
        assert!(r.loss < 1e-6);
        assert!(r.gradient.values().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let s = random_sample(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = ModelParams::init(&DEFAULT_DIMS, &mut rng);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&[s], &[], &cfg, Some(init.clone()), 0, 6.0).unwrap();
        assert_eq!(out.params, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train(&[], &[], &TrainConfig::default(), None, 0, 10.0).is_err());
    }

    #[test]
    fn separable_sample_reaches_full_accuracy() {
        let nodes = vec![
            node(1.0, 2.0, 0.9),
            node(-2.0, 1.0, 0.8),
            node(3.0, -1.0, 0.85),
            node(-1.0, -3.0, 0.05),
            node(2.5, 3.5, 0.05),
            node(-3.0, 2.0, 0.1),
        ];
        let labels = vec![true, true, true, false, false, false];
        let s = LabeledSample::new(build_graph(nodes, 10.0).unwrap(), labels, 0, "t").unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 200,
            augment: AugmentConfig::disabled(),
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(std::slice::from_ref(&s), &[], &cfg, None, 0, 10.0).unwrap();
        let first_perfect = out.history.iter().position(|m| m.train_accuracy == 1.0);
        assert!(first_perfect.is_some());
        let p = model_forward(&out.params, &s.graph).unwrap();
        assert_eq!(accuracy(&p, &s.labels, 0.5), 1.0);
    }

    #[test]
    fn small_step_descent_is_monotone() {
        let s = random_sample(12, 10);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 60,
            optimizer: OptimizerKind::Sgd,
            augment: AugmentConfig::disabled(),
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(std::slice::from_ref(&s), &[], &cfg, None, 0, 6.0).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-15);
        }
    }

    #[test]
    fn training_is_reproducible_and_continues_numbering() {
        let data: Vec<_> = (0..4).map(|k| random_sample(20 + k, 9)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&data, &data[..1], &cfg, None, 0, 6.0).unwrap();
        let b = train(&data, &data[..1], &cfg, None, 0, 6.0).unwrap();
        assert!(a.params.values().zip(b.params.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.history, b.history);
        let c = train(&data, &[], &cfg, Some(a.params), 3, 6.0).unwrap();
        assert_eq!(c.history.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![4, 5, 6]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotation_preserves_edges_and_labels(seed in any::<u64>(), n in 1usize..20, angle in 0.0..std::f64::consts::TAU) {
            let s = random_sample(seed, n);
            let draw = AugmentDraw { angle, p_noise: vec![0.0; n], xy_noise: vec![[0.0; 2]; n] };
            let a = apply_augmentation(&s, &draw, 6.0).unwrap();
            prop_assert_eq!(&a.labels, &s.labels);
            let pa: Vec<_> = a.graph.edges().iter().map(|e| (e.i, e.j)).collect();
            let ps: Vec<_> = s.graph.edges().iter().map(|e| (e.i, e.j)).collect();
            // an edge may flip only if its length sits within rounding of the radius
            if pa != ps {
                let marginal = s.graph.nodes().iter().enumerate().any(|(i, u)| {
                    s.graph.nodes()[i + 1..].iter().any(|v| ((u[0] - v[0]).hypot(u[1] - v[1]) - 6.0).abs() < 1e-9)
                });
                prop_assert!(marginal);
            }
        }

        #[test]
        fn augmentation_keeps_node_count(seed in any::<u64>(), n in 0usize..20) {
            let s = random_sample(seed, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = augment_sample(&s, &AugmentConfig::default(), 6.0, &mut rng).unwrap();
            prop_assert_eq!(a.graph.node_count(), n);
            prop_assert_eq!(&a.labels, &s.labels);
            prop_assert!(a.graph.nodes().iter().all(|v| (0.0..=1.0).contains(&v[3])));
        }
    }
}
