// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Radius graph construction and the three-block GraphSAGE classifier.
//!
//! Each block computes, per node `i`,
//!
//! ```text
//! z_i = W_self · h_i + b + W_neigh · mean_{j ∈ N(i)} h_j
//! ```
//!
//! with ReLU after the first two blocks and a sigmoid on the final scalar.
//! Nodes without neighbours aggregate to the zero vector. With 4-d input,
//! hidden widths 16/16 and a scalar output this is 705 parameters.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node features `[x, y, z, p_det]`.
pub type NodeFeatures = [f64; 4];

pub const INPUT_DIM: usize = 4;
pub const DEFAULT_DIMS: [(usize, usize); 3] = [(4, 16), (16, 16), (16, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Undirected radius graph over occupancy nodes.
#[derive(Debug, Clone)]
pub struct RadarGraph {
    nodes: Vec<NodeFeatures>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

fn node_distance(a: &NodeFeatures, b: &NodeFeatures) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl RadarGraph {
    /// Assemble a graph from an explicit edge list. Edges are normalized to
    /// `i < j`; self-loops, duplicates and out-of-range indices are rejected.
    pub fn from_parts(nodes: Vec<NodeFeatures>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        let mut norm = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j {
                return Err(Error::Contract(format!("self-loop on node {}", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::Contract(format!("edge ({}, {}) out of range for {n} nodes", e.i, e.j)));
            }
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            norm.push(Edge { i, j, distance: e.distance });
        }
        norm.sort_by_key(|e| (e.i, e.j));
        if norm.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::Contract("duplicate undirected edge".into()));
        }

        let mut degree = vec![0usize; n];
        for e in &norm {
            degree[e.i] += 1;
            degree[e.j] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for k in 0..n {
            offsets[k + 1] = offsets[k] + degree[k];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[n]];
        for e in &norm {
            neighbors[fill[e.i]] = e.j;
            fill[e.i] += 1;
            neighbors[fill[e.j]] = e.i;
            fill[e.j] += 1;
        }
        for k in 0..n {
            neighbors[offsets[k]..offsets[k + 1]].sort_unstable();
        }
        Ok(Self {
            nodes,
            edges: norm,
            offsets,
            neighbors,
        })
    }

    pub fn nodes(&self) -> &[NodeFeatures] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Same graph with new node features and unchanged connectivity.
    pub fn with_nodes(&self, nodes: Vec<NodeFeatures>) -> Result<Self> {
        if nodes.len() != self.nodes.len() {
            return Err(Error::Contract("node count changed".into()));
        }
        Ok(Self {
            nodes,
            ..self.clone()
        })
    }

    /// Sum over each node's neighbours of `values` (row-major, `dim` wide),
    /// divided by the degree. Isolated nodes get zeros.
    fn neighbor_mean(&self, values: &[f64], dim: usize) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            let nb = self.neighbors(i);
            if nb.is_empty() {
                continue;
            }
            let row = &mut out[i * dim..(i + 1) * dim];
            for &j in nb {
                let src = &values[j * dim..(j + 1) * dim];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += s;
                }
            }
            let inv = nb.len() as f64;
            for o in row.iter_mut() {
                *o /= inv;
            }
        }
        out
    }
}

/// Connect every node pair within `radius` (inclusive), storing the distance.
pub fn build_graph(nodes: Vec<NodeFeatures>, radius: f64) -> Result<RadarGraph> {
    if !(radius > 0.0) {
        return Err(Error::Contract(format!("graph radius must be > 0, got {radius}")));
    }
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let d = node_distance(&nodes[i], &nodes[j]);
            if d <= radius {
                edges.push(Edge { i, j, distance: d });
            }
        }
    }
    RadarGraph::from_parts(nodes, edges)
}

/// Row-major node-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_nodes(nodes: &[NodeFeatures]) -> Self {
        Self {
            rows: nodes.len(),
            cols: INPUT_DIM,
            data: nodes.iter().flatten().copied().collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// One GraphSAGE block. Weight matrices are `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_self: Vec<f64>,
    pub w_neigh: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SageLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w_self: vec![0.0; in_dim * out_dim],
            w_neigh: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±sqrt(6 / (in + out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.w_self.iter_mut().chain(layer.w_neigh.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.w_self.len() + self.w_neigh.len() + self.bias.len()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.in_dim * self.out_dim;
        if self.w_self.len() != n || self.w_neigh.len() != n || self.bias.len() != self.out_dim {
            return Err(Error::Contract(format!(
                "layer {}x{} expects {n}+{n}+{} values, found {}+{}+{}",
                self.out_dim,
                self.in_dim,
                self.out_dim,
                self.w_self.len(),
                self.w_neigh.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// `out[i] = W · x[i]` for every row.
fn project(w: &[f64], x: &[f64], rows: usize, in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xi = &x[r * in_dim..(r + 1) * in_dim];
        let oi = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, wrow) in oi.iter_mut().zip(w.chunks_exact(in_dim)) {
            *o = wrow.iter().zip(xi).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Intermediate values of one block kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub input: Vec<f64>,
    /// Neighbour mean of the input, when the block aggregated before projecting.
    pub aggregate: Option<Vec<f64>>,
    pub pre_activation: Vec<f64>,
}

fn layer_forward_traced(
    layer: &SageLayer,
    input: &[f64],
    graph: &RadarGraph,
    apply_relu: bool,
) -> Result<(Vec<f64>, LayerTrace)> {
    layer.check_shape()?;
    let n = graph.node_count();
    if input.len() != n * layer.in_dim {
        return Err(Error::Contract(format!(
            "feature width mismatch: layer expects {} columns for {n} nodes, got {} values",
            layer.in_dim,
            input.len()
        )));
    }
    let (din, dout) = (layer.in_dim, layer.out_dim);
    let mut z = project(&layer.w_self, input, n, din, dout);
    // mean and W_neigh commute; aggregate on the narrower side
    let aggregate = if din <= dout {
        let agg = graph.neighbor_mean(input, din);
        let neigh = project(&layer.w_neigh, &agg, n, din, dout);
        z.iter_mut().zip(&neigh).for_each(|(a, b)| *a += b);
        Some(agg)
    } else {
        let proj = project(&layer.w_neigh, input, n, din, dout);
        let neigh = graph.neighbor_mean(&proj, dout);
        z.iter_mut().zip(&neigh).for_each(|(a, b)| *a += b);
        None
    };
    for row in z.chunks_exact_mut(dout) {
        row.iter_mut().zip(&layer.bias).for_each(|(a, b)| *a += b);
    }
    let out = if apply_relu {
        z.iter().map(|&v| v.max(0.0)).collect()
    } else {
        z.clone()
    };
    Ok((
        out,
        LayerTrace {
            input: input.to_vec(),
            aggregate,
            pre_activation: z,
        },
    ))
}

/// Forward pass of a single block.
pub fn sage_layer_forward(
    layer: &SageLayer,
    features: &Features,
    graph: &RadarGraph,
    apply_relu: bool,
) -> Result<Features> {
    if features.cols != layer.in_dim || features.rows != graph.node_count() {
        return Err(Error::Contract(format!(
            "features are {}x{}, layer expects {}x{}",
            features.rows,
            features.cols,
            graph.node_count(),
            layer.in_dim
        )));
    }
    let (data, _) = layer_forward_traced(layer, &features.data, graph, apply_relu)?;
    Ok(Features {
        rows: features.rows,
        cols: layer.out_dim,
        data,
    })
}

/// Weights of the stacked classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<SageLayer>,
}

impl ModelParams {
    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        Self {
            layers: dims.iter().map(|&(i, o)| SageLayer::zeros(i, o)).collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: &[(usize, usize)], rng: &mut R) -> Self {
        Self {
            layers: dims.iter().map(|&(i, o)| SageLayer::init(i, o, rng)).collect(),
        }
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    /// Check shapes, chaining, input width, scalar output and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("model has no layers".into()));
        }
        for l in &self.layers {
            l.check_shape()?;
        }
        if self.layers[0].in_dim != INPUT_DIM {
            return Err(Error::Contract(format!(
                "first layer takes {} features, expected {INPUT_DIM}",
                self.layers[0].in_dim
            )));
        }
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Contract(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if self.layers.last().map(|l| l.out_dim) != Some(1) {
            return Err(Error::Contract("last layer must produce one logit".into()));
        }
        if !self.values().all(f64::is_finite) {
            return Err(Error::Contract("non-finite parameter".into()));
        }
        Ok(())
    }

    /// All scalars in checkpoint order: per layer `w_self`, `w_neigh`, `bias`.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w_self.iter().chain(&l.w_neigh).chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w_self.iter_mut().chain(l.w_neigh.iter_mut()).chain(l.bias.iter_mut()))
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::zeros(&DEFAULT_DIMS)
    }
}

/// Total scalar count: `Σ out·(2·in + 1)`.
pub fn count_params(params: &ModelParams) -> usize {
    params.layers.iter().map(SageLayer::param_count).sum()
}

pub fn count_params_for_dims(dims: &[(usize, usize)]) -> usize {
    dims.iter().map(|&(i, o)| o * (2 * i + 1)).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward pass keeping every block's intermediates.
pub(crate) fn forward_traced(params: &ModelParams, graph: &RadarGraph) -> Result<(Vec<f64>, Vec<LayerTrace>)> {
    let mut h: Vec<f64> = graph.nodes().iter().flatten().copied().collect();
    let mut traces = Vec::with_capacity(params.layers.len());
    let last = params.layers.len().saturating_sub(1);
    for (k, layer) in params.layers.iter().enumerate() {
        let (out, trace) = layer_forward_traced(layer, &h, graph, k != last)?;
        traces.push(trace);
        h = out;
    }
    Ok((h, traces))
}

/// Final-layer logits, one per node.
pub fn model_logits(params: &ModelParams, graph: &RadarGraph) -> Result<Vec<f64>> {
    if params.layers.last().map(|l| l.out_dim) != Some(1) {
        return Err(Error::Contract("last layer must produce one logit".into()));
    }
    Ok(forward_traced(params, graph)?.0)
}

/// Per-node probability that the node is a valid (non-multipath) return.
pub fn model_forward(params: &ModelParams, graph: &RadarGraph) -> Result<Vec<f64>> {
    Ok(model_logits(params, graph)?.into_iter().map(sigmoid).collect())
}

pub fn classify(probabilities: &[f64], threshold: f64) -> Vec<bool> {
    probabilities.iter().map(|&p| p >= threshold).collect()
}

pub const CHECKPOINT_FORMAT: &str = "radar-enhance-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model checkpoint (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Epochs of training behind these weights.
    #[serde(default)]
    pub epochs_completed: usize,
    /// World names seen during training.
    #[serde(default)]
    pub train_worlds: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epochs_completed: 0,
            train_worlds: Vec::new(),
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.params
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    Checkpoint::new(params.clone()).save(path)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    Ok(Checkpoint::load(path)?.params)
}
