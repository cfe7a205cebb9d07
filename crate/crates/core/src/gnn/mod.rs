//! Attention-based graph convolutional classifier and its training loop.
//!
//! Each layer sends a message along every temporal edge — a two-layer tanh
//! feedforward over the concatenated source and target features — weights the
//! incoming messages of every node by scaled-dot-product self-attention,
//! aggregates (mean or sum), and adds the node's previous feature back in
//! (through a linear projection when the dimensions differ). Nodes at the
//! first timestamp have no in-edges and ride the residual path alone. After
//! the final layer the node features are mean-pooled and a linear head
//! produces the per-class logits.
//!
//! Gradients are computed by explicit reverse-mode passes over the same
//! structure; `batch_loss_and_grads` is checked against central finite
//! differences in the test suite.

mod linalg;

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{FeatureTensor, TemporalGraph, FEATURE_DIM};

pub use linalg::Mat;
use linalg::{dot, softmax_inplace};

/// How weighted messages are combined per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Sum,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::Mean => write!(f, "mean"),
            Aggregation::Sum => write!(f, "sum"),
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            other => Err(format!("unknown aggregation '{other}' (expected mean or sum)")),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub layer_count: usize,
    pub n_classes: usize,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: FEATURE_DIM,
            hidden_dim: 64,
            layer_count: 2,
            n_classes: crate::types::DEFAULT_CLASS_COUNT,
            aggregation: Aggregation::Mean,
        }
    }
}

/// One layer: message net, attention projections, optional residual
/// projection for the dimension-changing first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Message net first map, `hidden x 2*in_dim` over `[src ; dst]`.
    pub w_msg1: Mat,
    pub b_msg1: Vec<f64>,
    /// Message net second map, `out_dim x hidden`.
    pub w_msg2: Mat,
    pub b_msg2: Vec<f64>,
    /// Attention query projection, `hidden x in_dim`.
    pub w_query: Mat,
    /// Attention key projection, `hidden x in_dim`.
    pub w_key: Mat,
    /// Residual projection `out_dim x in_dim`; `None` means identity.
    pub w_res: Option<Mat>,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.w_query.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_msg2.rows()
    }
}

/// Full parameter set: stacked layers plus the linear classifier head.
///
/// `input_shift` and `input_scale` standardize the raw (RSS, phase) features
/// before the first layer. They are fitted from training-set statistics, not
/// trained, so they are serialized with the checkpoint but excluded from the
/// trainable parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub w_cls: Mat,
    pub b_cls: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

fn init_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Mat::from_data(rows, cols, data)
}

impl ModelParams {
    /// Uniform fan-in initialization, fully determined by the RNG state.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        assert!(config.layer_count >= 1, "need at least one layer");
        let h = config.hidden_dim;
        let layers = (0..config.layer_count)
            .map(|l| {
                let p = if l == 0 { config.feature_dim } else { h };
                LayerParams {
                    w_msg1: init_mat(h, 2 * p, rng),
                    b_msg1: vec![0.0; h],
                    w_msg2: init_mat(h, h, rng),
                    b_msg2: vec![0.0; h],
                    w_query: init_mat(h, p, rng),
                    w_key: init_mat(h, p, rng),
                    w_res: if p == h { None } else { Some(init_mat(h, p, rng)) },
                }
            })
            .collect();
        ModelParams {
            config: config.clone(),
            layers,
            w_cls: init_mat(config.n_classes, h, rng),
            b_cls: vec![0.0; config.n_classes],
            input_shift: vec![0.0; config.feature_dim],
            input_scale: vec![1.0; config.feature_dim],
        }
    }

    /// Same shapes, all zeros; used for gradient and momentum accumulators.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                w_msg1: Mat::zeros(l.w_msg1.rows(), l.w_msg1.cols()),
                b_msg1: vec![0.0; l.b_msg1.len()],
                w_msg2: Mat::zeros(l.w_msg2.rows(), l.w_msg2.cols()),
                b_msg2: vec![0.0; l.b_msg2.len()],
                w_query: Mat::zeros(l.w_query.rows(), l.w_query.cols()),
                w_key: Mat::zeros(l.w_key.rows(), l.w_key.cols()),
                w_res: l
                    .w_res
                    .as_ref()
                    .map(|m| Mat::zeros(m.rows(), m.cols())),
            })
            .collect();
        ModelParams {
            config: self.config.clone(),
            layers,
            w_cls: Mat::zeros(self.w_cls.rows(), self.w_cls.cols()),
            b_cls: vec![0.0; self.b_cls.len()],
            input_shift: vec![0.0; self.input_shift.len()],
            input_scale: vec![1.0; self.input_scale.len()],
        }
    }

    /// All parameter tensors as flat slices, in a fixed canonical order.
    pub fn flat(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        for l in &self.layers {
            out.push(("w_msg1", l.w_msg1.data()));
            out.push(("b_msg1", &l.b_msg1));
            out.push(("w_msg2", l.w_msg2.data()));
            out.push(("b_msg2", &l.b_msg2));
            out.push(("w_query", l.w_query.data()));
            out.push(("w_key", l.w_key.data()));
            if let Some(r) = &l.w_res {
                out.push(("w_res", r.data()));
            }
        }
        out.push(("w_cls", self.w_cls.data()));
        out.push(("b_cls", &self.b_cls));
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_msg1.data_mut());
            out.push(&mut l.b_msg1);
            out.push(l.w_msg2.data_mut());
            out.push(&mut l.b_msg2);
            out.push(l.w_query.data_mut());
            out.push(l.w_key.data_mut());
            if let Some(r) = &mut l.w_res {
                out.push(r.data_mut());
            }
        }
        out.push(self.w_cls.data_mut());
        out.push(&mut self.b_cls);
        out
    }

    pub fn param_count(&self) -> usize {
        self.flat().iter().map(|(_, s)| s.len()).sum()
    }

    /// Every parameter concatenated into one vector (canonical order).
    pub fn to_param_vector(&self) -> Vec<f64> {
        self.flat().iter().flat_map(|(_, s)| s.iter().cloned()).collect()
    }

    pub fn set_param_vector(&mut self, values: &[f64]) {
        let mut offset = 0;
        for slice in self.flat_mut() {
            slice.copy_from_slice(&values[offset..offset + slice.len()]);
            offset += slice.len();
        }
        assert_eq!(offset, values.len());
    }

    fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.flat_mut().into_iter().zip(other.flat()) {
            for (d, s) in dst.iter_mut().zip(src.1.iter()) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for slice in self.flat_mut() {
            for v in slice {
                *v *= factor;
            }
        }
    }
}

/// One classifiable sample: features, temporal structure, 1-based label.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub tensor: FeatureTensor,
    pub graph: TemporalGraph,
    pub label: u8,
}

/// Mini-batch gradient descent flavor.
///
/// The gradient magnitudes of the message nets, attention projections, and
/// classifier head differ by orders of magnitude (node-mean pooling scales
/// the upstream paths down hard), so the adaptive variant is the default;
/// plain momentum descent is kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Momentum,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "momentum" | "sgd" => Ok(Optimizer::Momentum),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer '{other}' (expected momentum or adam)")),
        }
    }
}

/// Optimizer settings. `seed` fixes initialization and shuffling, and two
/// runs with the same seed produce bit-identical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            weight_decay: 0.0,
            momentum: 0.9,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has label {label}, outside 1..={n_classes}")]
    BadLabel {
        index: usize,
        label: u8,
        n_classes: usize,
    },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Trained parameters plus the loss/accuracy trace.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub trace: Vec<EpochStats>,
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct LayerCache {
    /// Layer input, `node_count * in_dim`.
    input: Vec<f64>,
    /// Query projections, `node_count * hidden`.
    q: Vec<f64>,
    /// Key projections, `node_count * hidden`.
    kp: Vec<f64>,
    /// tanh activations per edge, `edge_count * hidden`.
    edge_h1: Vec<f64>,
    /// Messages per edge, `edge_count * out_dim`.
    edge_m: Vec<f64>,
    /// Attention weights per edge.
    edge_alpha: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

fn edge_count(graph: &TemporalGraph) -> usize {
    (graph.t_len - 1) * graph.n_tags * graph.k
}

/// tanh through one exp; noticeably faster than libm's tanh on the hot edge
/// loop and exact to rounding, so the `1 - tanh^2` backward identity holds.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        -1.0
    } else {
        let e = (2.0 * x).exp();
        (e - 1.0) / (e + 1.0)
    }
}

#[inline]
fn edge_block(graph: &TemporalGraph, t: usize, j: usize) -> usize {
    ((t - 1) * graph.n_tags + j) * graph.k
}

/// One message-passing layer over per-node feature vectors.
///
/// `features` is node-major (`node = t * n_tags + n`), `in_dim` wide.
pub fn layer_forward(
    graph: &TemporalGraph,
    features: &[f64],
    layer: &LayerParams,
    aggregation: Aggregation,
) -> Vec<f64> {
    layer_forward_cached(graph, features, layer, aggregation).0
}

fn layer_forward_cached(
    graph: &TemporalGraph,
    features: &[f64],
    layer: &LayerParams,
    aggregation: Aggregation,
) -> (Vec<f64>, LayerCache) {
    let n = graph.n_tags;
    let node_count = graph.node_count();
    let p = layer.in_dim();
    let h = layer.w_msg1.rows();
    let r = layer.out_dim();
    assert_eq!(features.len(), node_count * p, "feature width mismatch");

    // Per-node projections, computed once and reused across edges.
    let mut src_proj = vec![0.0f64; node_count * h];
    let mut dst_proj = vec![0.0f64; node_count * h];
    let mut q = vec![0.0f64; node_count * h];
    let mut kp = vec![0.0f64; node_count * h];
    let mut output = vec![0.0f64; node_count * r];
    for node in 0..node_count {
        let x = &features[node * p..(node + 1) * p];
        layer
            .w_msg1
            .matvec_cols_add(0, x, &mut src_proj[node * h..(node + 1) * h]);
        let dst = &mut dst_proj[node * h..(node + 1) * h];
        dst.copy_from_slice(&layer.b_msg1);
        layer.w_msg1.matvec_cols_add(p, x, dst);
        layer.w_query.matvec(x, &mut q[node * h..(node + 1) * h]);
        layer.w_key.matvec(x, &mut kp[node * h..(node + 1) * h]);
        let out = &mut output[node * r..(node + 1) * r];
        match &layer.w_res {
            Some(w) => w.matvec(x, out),
            None => out.copy_from_slice(x),
        }
    }

    let scale = 1.0 / (h as f64).sqrt();
    let n_edges = edge_count(graph);
    let mut edge_h1 = vec![0.0f64; n_edges * h];
    let mut edge_m = vec![0.0f64; n_edges * r];
    let mut edge_alpha = vec![0.0f64; n_edges];
    let mut scores = vec![0.0f64; graph.k];
    let mut z1 = vec![0.0f64; h];

    for t in 1..graph.t_len {
        for j in 0..n {
            let node = t * n + j;
            let sources = graph.in_neighbors(t, j);
            debug_assert_eq!(sources.len(), graph.k);
            let base = edge_block(graph, t, j);
            for (e, &src) in sources.iter().enumerate() {
                let snode = (t - 1) * n + src;
                let h1 = &mut edge_h1[(base + e) * h..(base + e + 1) * h];
                for (zi, (a, b)) in z1.iter_mut().zip(
                    src_proj[snode * h..(snode + 1) * h]
                        .iter()
                        .zip(dst_proj[node * h..(node + 1) * h].iter()),
                ) {
                    *zi = a + b;
                }
                for (hv, zv) in h1.iter_mut().zip(z1.iter()) {
                    *hv = fast_tanh(*zv);
                }
                let m = &mut edge_m[(base + e) * r..(base + e + 1) * r];
                m.copy_from_slice(&layer.b_msg2);
                layer.w_msg2.matvec_cols_add(0, h1, m);
                scores[e] = dot(
                    &q[node * h..(node + 1) * h],
                    &kp[snode * h..(snode + 1) * h],
                ) * scale;
            }
            softmax_inplace(&mut scores);
            edge_alpha[base..base + graph.k].copy_from_slice(&scores);
            let agg_scale = match aggregation {
                Aggregation::Mean => 1.0 / graph.k as f64,
                Aggregation::Sum => 1.0,
            };
            let out = &mut output[node * r..(node + 1) * r];
            for e in 0..graph.k {
                let weight = agg_scale * scores[e];
                let m = &edge_m[(base + e) * r..(base + e + 1) * r];
                for (o, mv) in out.iter_mut().zip(m.iter()) {
                    *o += weight * mv;
                }
            }
        }
    }

    let cache = LayerCache {
        input: features.to_vec(),
        q,
        kp,
        edge_h1,
        edge_m,
        edge_alpha,
    };
    (output, cache)
}

fn forward_cached(
    params: &ModelParams,
    tensor: &FeatureTensor,
    graph: &TemporalGraph,
) -> ForwardCache {
    assert_eq!(tensor.t_len, graph.t_len);
    assert_eq!(tensor.n_tags, graph.n_tags);
    let d = params.config.feature_dim;
    let mut feats = tensor.values().to_vec();
    for chunk in feats.chunks_mut(d) {
        for (v, (shift, scale)) in chunk
            .iter_mut()
            .zip(params.input_shift.iter().zip(params.input_scale.iter()))
        {
            *v = (*v - shift) / scale;
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer_forward_cached(graph, &feats, layer, params.config.aggregation);
        layers.push(cache);
        feats = next;
    }
    let r = params.config.hidden_dim;
    let node_count = graph.node_count();
    let mut pooled = vec![0.0f64; r];
    for node in 0..node_count {
        for (p, v) in pooled.iter_mut().zip(&feats[node * r..(node + 1) * r]) {
            *p += v;
        }
    }
    for p in &mut pooled {
        *p /= node_count as f64;
    }
    let mut logits = vec![0.0f64; params.config.n_classes];
    params.w_cls.matvec(&pooled, &mut logits);
    for (l, b) in logits.iter_mut().zip(params.b_cls.iter()) {
        *l += b;
    }
    ForwardCache {
        layers,
        pooled,
        logits,
    }
}

/// Full forward pass: stacked layers, mean pooling over all nodes, linear
/// classifier. Returns the raw logits.
pub fn forward(params: &ModelParams, tensor: &FeatureTensor, graph: &TemporalGraph) -> Vec<f64> {
    forward_cached(params, tensor, graph).logits
}

/// Softmax probabilities and the predicted 1-based class, ties broken by
/// smaller class id.
pub fn predict(
    params: &ModelParams,
    tensor: &FeatureTensor,
    graph: &TemporalGraph,
) -> (u8, Vec<f64>) {
    let mut probs = forward(params, tensor, graph);
    softmax_inplace(&mut probs);
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    ((best + 1) as u8, probs)
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

fn layer_backward(
    graph: &TemporalGraph,
    layer: &LayerParams,
    cache: &LayerCache,
    dout: &[f64],
    aggregation: Aggregation,
    grads: &mut LayerParams,
) -> Vec<f64> {
    let n = graph.n_tags;
    let node_count = graph.node_count();
    let p = layer.in_dim();
    let h = layer.w_msg1.rows();
    let r = layer.out_dim();
    let scale = 1.0 / (h as f64).sqrt();

    let mut dx = vec![0.0f64; node_count * p];
    let mut dq = vec![0.0f64; node_count * h];
    let mut dk = vec![0.0f64; node_count * h];
    let mut dalpha = vec![0.0f64; graph.k];
    let mut dm = vec![0.0f64; r];
    let mut dh1 = vec![0.0f64; h];
    let mut dz1 = vec![0.0f64; h];

    for t in 1..graph.t_len {
        for j in 0..n {
            let node = t * n + j;
            let sources = graph.in_neighbors(t, j);
            let base = edge_block(graph, t, j);
            let dnode = &dout[node * r..(node + 1) * r];
            let agg_scale = match aggregation {
                Aggregation::Mean => 1.0 / graph.k as f64,
                Aggregation::Sum => 1.0,
            };
            let alphas = &cache.edge_alpha[base..base + graph.k];
            // d(alpha_e) and softmax jacobian.
            let mut sum_ad = 0.0;
            for e in 0..graph.k {
                let m = &cache.edge_m[(base + e) * r..(base + e + 1) * r];
                dalpha[e] = agg_scale * dot(dnode, m);
                sum_ad += alphas[e] * dalpha[e];
            }
            for (e, &src) in sources.iter().enumerate() {
                let snode = (t - 1) * n + src;
                let ds = alphas[e] * (dalpha[e] - sum_ad) * scale;
                if ds != 0.0 {
                    let kvec = &cache.kp[snode * h..(snode + 1) * h];
                    let qvec = &cache.q[node * h..(node + 1) * h];
                    let dqn = &mut dq[node * h..(node + 1) * h];
                    for (d, kv) in dqn.iter_mut().zip(kvec.iter()) {
                        *d += ds * kv;
                    }
                    let dkn = &mut dk[snode * h..(snode + 1) * h];
                    for (d, qv) in dkn.iter_mut().zip(qvec.iter()) {
                        *d += ds * qv;
                    }
                }
                // Message gradient.
                let weight = agg_scale * alphas[e];
                for (d, o) in dm.iter_mut().zip(dnode.iter()) {
                    *d = weight * o;
                }
                let h1 = &cache.edge_h1[(base + e) * h..(base + e + 1) * h];
                grads.w_msg2.outer_add(&dm, h1);
                for (b, d) in grads.b_msg2.iter_mut().zip(dm.iter()) {
                    *b += d;
                }
                for d in dh1.iter_mut() {
                    *d = 0.0;
                }
                layer.w_msg2.matvec_t_add(&dm, &mut dh1);
                for ((dz, dh), hv) in dz1.iter_mut().zip(dh1.iter()).zip(h1.iter()) {
                    *dz = dh * (1.0 - hv * hv);
                }
                let x_src = &cache.input[snode * p..(snode + 1) * p];
                let x_dst = &cache.input[node * p..(node + 1) * p];
                grads.w_msg1.outer_add_cols(0, &dz1, x_src);
                grads.w_msg1.outer_add_cols(p, &dz1, x_dst);
                for (b, d) in grads.b_msg1.iter_mut().zip(dz1.iter()) {
                    *b += d;
                }
                layer
                    .w_msg1
                    .matvec_t_cols_add(0, &dz1, &mut dx[snode * p..(snode + 1) * p]);
                layer
                    .w_msg1
                    .matvec_t_cols_add(p, &dz1, &mut dx[node * p..(node + 1) * p]);
            }
        }
    }

    // Residual path and attention projections, every node.
    for node in 0..node_count {
        let x = &cache.input[node * p..(node + 1) * p];
        let dnode = &dout[node * r..(node + 1) * r];
        match (&layer.w_res, &mut grads.w_res) {
            (Some(w), Some(gw)) => {
                gw.outer_add(dnode, x);
                w.matvec_t_add(dnode, &mut dx[node * p..(node + 1) * p]);
            }
            _ => {
                for (d, o) in dx[node * p..(node + 1) * p].iter_mut().zip(dnode.iter()) {
                    *d += o;
                }
            }
        }
        let dqn = &dq[node * h..(node + 1) * h];
        grads.w_query.outer_add(dqn, x);
        layer
            .w_query
            .matvec_t_add(dqn, &mut dx[node * p..(node + 1) * p]);
        let dkn = &dk[node * h..(node + 1) * h];
        grads.w_key.outer_add(dkn, x);
        layer
            .w_key
            .matvec_t_add(dkn, &mut dx[node * p..(node + 1) * p]);
    }
    dx
}

/// Cross-entropy of one sample plus gradient accumulation into `grads`
/// (unscaled; callers divide by the batch size). Returns `(loss, correct)`.
fn forward_backward_sample(
    params: &ModelParams,
    example: &TrainExample,
    grads: &mut ModelParams,
) -> (f64, bool) {
    let cache = forward_cached(params, &example.tensor, &example.graph);
    let label_idx = (example.label - 1) as usize;

    let mut probs = cache.logits.clone();
    softmax_inplace(&mut probs);
    let loss = -probs[label_idx].max(1e-300).ln();
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    let correct = best == label_idx;

    let mut dlogits = probs;
    dlogits[label_idx] -= 1.0;

    grads.w_cls.outer_add(&dlogits, &cache.pooled);
    for (b, d) in grads.b_cls.iter_mut().zip(dlogits.iter()) {
        *b += d;
    }
    let r = params.config.hidden_dim;
    let node_count = example.graph.node_count();
    let mut dpooled = vec![0.0f64; r];
    params.w_cls.matvec_t_add(&dlogits, &mut dpooled);
    let inv = 1.0 / node_count as f64;
    let mut dfeats = vec![0.0f64; node_count * r];
    for node in 0..node_count {
        for (d, g) in dfeats[node * r..(node + 1) * r].iter_mut().zip(dpooled.iter()) {
            *d = g * inv;
        }
    }
    for idx in (0..params.layers.len()).rev() {
        dfeats = layer_backward(
            &example.graph,
            &params.layers[idx],
            &cache.layers[idx],
            &dfeats,
            params.config.aggregation,
            &mut grads.layers[idx],
        );
    }
    (loss, correct)
}

/// Chunk size for deterministic parallel gradient accumulation: partial sums
/// are produced per fixed-size chunk and folded in chunk order, so results do
/// not depend on thread count or scheduling.
const GRAD_CHUNK: usize = 8;

/// Mean cross-entropy loss, correct-prediction count, and mean gradients
/// over a batch.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    examples: &[&TrainExample],
) -> (f64, usize, ModelParams) {
    let partials: Vec<(f64, usize, ModelParams)> = examples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            let mut correct = 0usize;
            for ex in chunk {
                let (l, c) = forward_backward_sample(params, ex, &mut grads);
                loss += l;
                correct += c as usize;
            }
            (loss, correct, grads)
        })
        .collect();
    let mut total_loss = 0.0;
    let mut total_correct = 0usize;
    let mut grads = params.zeros_like();
    for (l, c, g) in partials {
        total_loss += l;
        total_correct += c;
        grads.add_scaled(&g, 1.0);
    }
    let inv = 1.0 / examples.len() as f64;
    grads.scale(inv);
    (total_loss * inv, total_correct, grads)
}

/// Mean cross-entropy loss over a batch, no gradients. Finite-difference
/// checks perturb parameters and call this.
pub fn batch_loss(params: &ModelParams, examples: &[&TrainExample]) -> f64 {
    let total: f64 = examples
        .par_iter()
        .map(|ex| {
            let cache = forward_cached(params, &ex.tensor, &ex.graph);
            let mut probs = cache.logits;
            softmax_inplace(&mut probs);
            -probs[(ex.label - 1) as usize].max(1e-300).ln()
        })
        .sum();
    total / examples.len() as f64
}

/// Per-feature mean and standard deviation over every node of every training
/// tensor, with the deviation floored away from zero.
fn fit_input_scaler(dataset: &[TrainExample], feature_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0f64; feature_dim];
    let mut count = 0usize;
    for ex in dataset {
        for chunk in ex.tensor.values().chunks(feature_dim) {
            for (m, v) in mean.iter_mut().zip(chunk.iter()) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count.max(1) as f64;
    }
    let mut var = vec![0.0f64; feature_dim];
    for ex in dataset {
        for chunk in ex.tensor.values().chunks(feature_dim) {
            for ((s, v), m) in var.iter_mut().zip(chunk.iter()).zip(mean.iter()) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let scale = var
        .iter()
        .map(|s| (s / count.max(1) as f64).sqrt().max(1e-8))
        .collect();
    (mean, scale)
}

/// Train by mini-batch gradient descent with momentum. Deterministic given
/// `cfg.seed`; aborts with a diagnostic if the loss leaves the finite range.
pub fn train(
    dataset: &[TrainExample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, ex) in dataset.iter().enumerate() {
        if ex.label == 0 || ex.label as usize > model_cfg.n_classes {
            return Err(TrainError::BadLabel {
                index,
                label: ex.label,
                n_classes: model_cfg.n_classes,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model_cfg, &mut rng);
    let (shift, scale) = fit_input_scaler(dataset, model_cfg.feature_dim);
    params.input_shift = shift;
    params.input_scale = scale;
    let mut first_moment = params.zeros_like();
    let mut second_moment = params.zeros_like();
    let mut step = 0usize;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    const BETA2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut batch_count = 0usize;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size.max(1)).enumerate() {
            let examples: Vec<&TrainExample> = batch.iter().map(|&i| &dataset[i]).collect();
            let (loss, correct, mut grads) = batch_loss_and_grads(&params, &examples);
            if !loss.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            if cfg.weight_decay != 0.0 {
                grads.add_scaled(&params, cfg.weight_decay);
            }
            match cfg.optimizer {
                Optimizer::Momentum => {
                    first_moment.scale(cfg.momentum);
                    first_moment.add_scaled(&grads, 1.0);
                    params.add_scaled(&first_moment, -cfg.learning_rate);
                }
                Optimizer::Adam => {
                    step += 1;
                    let b1 = cfg.momentum;
                    let bias1 = 1.0 - b1.powi(step as i32);
                    let bias2 = 1.0 - BETA2.powi(step as i32);
                    for ((p, g), (m, v)) in params
                        .flat_mut()
                        .into_iter()
                        .zip(grads.flat_mut())
                        .zip(first_moment.flat_mut().into_iter().zip(second_moment.flat_mut()))
                    {
                        for i in 0..p.len() {
                            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                            let m_hat = m[i] / bias1;
                            let v_hat = v[i] / bias2;
                            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
            epoch_loss += loss;
            epoch_correct += correct;
            batch_count += 1;
        }
        trace.push(EpochStats {
            epoch,
            loss: epoch_loss / batch_count as f64,
            accuracy: epoch_correct as f64 / dataset.len() as f64,
        });
    }
    Ok(TrainOutput { params, trace })
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"RFGESTM1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a model checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint layout mismatch: {0}")]
    Layout(String),
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Serialize parameters: magic, version header, shape table interleaved with
/// the row-major `f64` little-endian payload of every tensor.
pub fn save_checkpoint<W: Write>(params: &ModelParams, w: &mut W) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u32(w, params.config.feature_dim as u32)?;
    write_u32(w, params.config.hidden_dim as u32)?;
    write_u32(w, params.config.layer_count as u32)?;
    write_u32(w, params.config.n_classes as u32)?;
    w.write_all(&[match params.config.aggregation {
        Aggregation::Mean => 0u8,
        Aggregation::Sum => 1u8,
    }])?;
    let mut tensors: Vec<(String, &[f64])> = vec![
        ("input.shift".to_string(), params.input_shift.as_slice()),
        ("input.scale".to_string(), params.input_scale.as_slice()),
    ];
    for (i, l) in params.layers.iter().enumerate() {
        tensors.push((format!("layer{i}.w_msg1"), l.w_msg1.data()));
        tensors.push((format!("layer{i}.b_msg1"), &l.b_msg1));
        tensors.push((format!("layer{i}.w_msg2"), l.w_msg2.data()));
        tensors.push((format!("layer{i}.b_msg2"), &l.b_msg2));
        tensors.push((format!("layer{i}.w_query"), l.w_query.data()));
        tensors.push((format!("layer{i}.w_key"), l.w_key.data()));
        if let Some(r) = &l.w_res {
            tensors.push((format!("layer{i}.w_res"), r.data()));
        }
    }
    tensors.push(("classifier.w".to_string(), params.w_cls.data()));
    tensors.push(("classifier.b".to_string(), &params.b_cls));
    write_u32(w, tensors.len() as u32)?;
    for (name, data) in &tensors {
        let bytes = name.as_bytes();
        write_u32(w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        write_u32(w, data.len() as u32)?;
        for v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deserialize a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<ModelParams, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let feature_dim = read_u32(r)? as usize;
    let hidden_dim = read_u32(r)? as usize;
    let layer_count = read_u32(r)? as usize;
    let n_classes = read_u32(r)? as usize;
    let mut agg_byte = [0u8; 1];
    r.read_exact(&mut agg_byte)?;
    let aggregation = match agg_byte[0] {
        0 => Aggregation::Mean,
        1 => Aggregation::Sum,
        other => {
            return Err(CheckpointError::Layout(format!(
                "unknown aggregation tag {other}"
            )))
        }
    };
    let config = ModelConfig {
        feature_dim,
        hidden_dim,
        layer_count,
        n_classes,
        aggregation,
    };
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(&config, &mut rng);

    let tensor_count = read_u32(r)? as usize;
    let expected = params.flat().len() + 2;
    if tensor_count != expected {
        return Err(CheckpointError::Layout(format!(
            "expected {expected} tensors, found {tensor_count}"
        )));
    }
    let mut read_into = |slice: &mut [f64]| -> Result<(), CheckpointError> {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let len = read_u32(r)? as usize;
        if len != slice.len() {
            return Err(CheckpointError::Layout(format!(
                "tensor {} has {} values, expected {}",
                String::from_utf8_lossy(&name),
                len,
                slice.len()
            )));
        }
        let mut buf = [0u8; 8];
        for v in slice.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(())
    };
    let mut shift = vec![0.0f64; feature_dim];
    let mut scale = vec![1.0f64; feature_dim];
    read_into(&mut shift)?;
    read_into(&mut scale)?;
    for slice in params.flat_mut() {
        read_into(slice)?;
    }
    params.input_shift = shift;
    params.input_scale = scale;
    Ok(params)
}

#[cfg(test)]
mod tests;
