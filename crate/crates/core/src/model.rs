//! The trVAE network and its losses.
//!
//! ```text
//! z  = f(x, s)      encoder MLP on [x, onehot(s)] → (μ, log σ²), z = μ + σ ⊙ ε
//! y1 = g1(z, s)     one affine + leaky layer on [z, onehot(s)]
//! x̂  = g2(y1)       MLP without condition input, linear output
//! ```
//!
//! The minimized loss sums, over the conditions present in a batch, the
//! per-condition CVAE loss `η·MSE(x, x̂) + α·KL(q(z|x,s) ‖ N(0, I))`, and
//! adds `β·MMD` between the per-condition groups of the regularized layer
//! (`y1` for trVAE, `z` for the bottleneck ablation, nothing for a plain CVAE).

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::mmd::{mmd_multigroup_node, KernelSpec};
use crate::rng::SplitMix64;
use crate::tensor::{one_hot, Graph, NodeId, Tensor};

/// Which layer the MMD penalty acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdLayer {
    /// Vanilla CVAE.
    None,
    /// Bottleneck, as in the VFAE.
    Z,
    /// First decoder layer (trVAE).
    Y1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub condition_count: usize,
    #[serde(default = "defaults::encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "defaults::z_dim")]
    pub z_dim: usize,
    #[serde(default = "defaults::g1_dim")]
    pub g1_dim: usize,
    #[serde(default = "defaults::g2_hidden")]
    pub g2_hidden: Vec<usize>,
    #[serde(default = "defaults::slope")]
    pub activation_slope: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::mmd_layer")]
    pub mmd_layer: MmdLayer,
    #[serde(default)]
    pub kernel: KernelSpec,
}

mod defaults {
    use super::MmdLayer;

    pub fn encoder_hidden() -> Vec<usize> {
        vec![128, 64]
    }
    pub fn z_dim() -> usize {
        10
    }
    pub fn g1_dim() -> usize {
        64
    }
    pub fn g2_hidden() -> Vec<usize> {
        vec![128]
    }
    pub fn slope() -> f64 {
        0.2
    }
    pub fn alpha() -> f64 {
        0.001
    }
    pub fn eta() -> f64 {
        1.0
    }
    pub fn beta() -> f64 {
        0.3
    }
    pub fn mmd_layer() -> MmdLayer {
        MmdLayer::Y1
    }
}

impl ModelConfig {
    /// Default architecture and weights for the given data shape.
    pub fn new(input_dim: usize, condition_count: usize) -> Self {
        Self {
            input_dim,
            condition_count,
            encoder_hidden: defaults::encoder_hidden(),
            z_dim: defaults::z_dim(),
            g1_dim: defaults::g1_dim(),
            g2_hidden: defaults::g2_hidden(),
            activation_slope: defaults::slope(),
            alpha: defaults::alpha(),
            eta: defaults::eta(),
            beta: defaults::beta(),
            mmd_layer: defaults::mmd_layer(),
            kernel: KernelSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [("input_dim", self.input_dim), ("z_dim", self.z_dim), ("g1_dim", self.g1_dim)];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.encoder_hidden.contains(&0) {
            return Err(Error::config("encoder_hidden", "layer widths must be at least 1"));
        }
        if self.g2_hidden.contains(&0) {
            return Err(Error::config("g2_hidden", "layer widths must be at least 1"));
        }
        if self.condition_count < 2 {
            return Err(Error::config("condition_count", "need at least 2 conditions"));
        }
        if !(0.0..1.0).contains(&self.activation_slope) {
            return Err(Error::config("activation_slope", "must lie in [0, 1)"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha", "must be finite and >= 0"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("eta", "must be finite and > 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        self.kernel
            .validate()
            .map_err(|e| Error::config("kernel.gammas", e.to_string()))
    }

    fn effective_beta(&self) -> f64 {
        match self.mmd_layer {
            MmdLayer::None => 0.0,
            _ => self.beta,
        }
    }
}

/// One affine layer: `x · weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[1 × out]`
    pub bias: Tensor,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    fn init(fan_in: usize, fan_out: usize, slope: f64, rng: &mut SplitMix64) -> Self {
        let std = (2.0 / (fan_in as f64 * (1.0 + slope * slope))).sqrt();
        let bound = 3f64.sqrt() * std;
        let w = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            weight: Tensor::raw(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

/// Encoder (φ) and decoder (θ) weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub g1: Dense,
    pub g2: Vec<Dense>,
}

/// `(fan_in, fan_out)` of every layer in parameter order.
fn layer_dims(config: &ModelConfig) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let mut width = config.input_dim + config.condition_count;
    for &h in &config.encoder_hidden {
        dims.push((width, h));
        width = h;
    }
    dims.push((width, config.z_dim));
    dims.push((width, config.z_dim));
    dims.push((config.z_dim + config.condition_count, config.g1_dim));
    width = config.g1_dim;
    for &h in &config.g2_hidden {
        dims.push((width, h));
        width = h;
    }
    dims.push((width, config.input_dim));
    dims
}

impl ModelParams {
    fn from_layers(config: &ModelConfig, mut layers: Vec<Dense>) -> Self {
        let n_enc = config.encoder_hidden.len();
        let g2 = layers.split_off(n_enc + 3);
        let g1 = layers.pop().expect("g1");
        let logvar_head = layers.pop().expect("logvar head");
        let mu_head = layers.pop().expect("mu head");
        Self {
            encoder: layers,
            mu_head,
            logvar_head,
            g1,
            g2,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let layers = layer_dims(config)
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        Self::from_layers(config, layers)
    }

    /// Seeded uniform weights with standard deviation
    /// `sqrt(2 / (fan_in·(1 + slope²)))`, zero biases. Layers are drawn in
    /// parameter order, each weight matrix row-major.
    pub fn init(config: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let layers = layer_dims(config)
            .into_iter()
            .map(|(i, o)| Dense::init(i, o, config.activation_slope, rng))
            .collect();
        Self::from_layers(config, layers)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head, &self.g1])
            .chain(self.g2.iter())
    }

    /// All tensors in a fixed order: per layer, weight then bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|d| [&d.weight, &d.bias]).collect()
    }

    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        layer_dims(config)
            .into_iter()
            .flat_map(|(i, o)| [vec![i, o], vec![1, o]])
            .collect()
    }

    /// Inverse of [`ModelParams::tensors`].
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::shapes(config);
        if shapes.len() != tensors.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter tensor {i}: expected shape {s:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let layers = layer_dims(config)
            .iter()
            .map(|_| Dense {
                weight: it.next().expect("counted"),
                bias: it.next().expect("counted"),
            })
            .collect();
        Ok(Self::from_layers(config, layers))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Registers every tensor as a parameter leaf.
    pub fn register(&self, g: &mut Graph) -> ParamNodes {
        let ids: Vec<NodeId> = self.tensors().into_iter().map(|t| g.param(t.clone())).collect();
        self.bind(ids)
    }

    /// Registers every tensor as a constant (inference only).
    pub fn register_frozen(&self, g: &mut Graph) -> ParamNodes {
        let ids: Vec<NodeId> = self
            .tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        self.bind(ids)
    }

    /// Wraps node ids already holding this model's tensors, in [`Self::tensors`] order.
    pub fn bind(&self, ids: Vec<NodeId>) -> ParamNodes {
        assert_eq!(ids.len(), self.tensors().len(), "one node per parameter tensor");
        let layers: Vec<(NodeId, NodeId)> = ids.chunks(2).map(|c| (c[0], c[1])).collect();
        let n_enc = self.encoder.len();
        ParamNodes {
            encoder: layers[..n_enc].to_vec(),
            mu_head: layers[n_enc],
            logvar_head: layers[n_enc + 1],
            g1: layers[n_enc + 2],
            g2: layers[n_enc + 3..].to_vec(),
            ids,
        }
    }
}

/// Graph handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamNodes {
    encoder: Vec<(NodeId, NodeId)>,
    mu_head: (NodeId, NodeId),
    logvar_head: (NodeId, NodeId),
    g1: (NodeId, NodeId),
    g2: Vec<(NodeId, NodeId)>,
    /// Same order as [`ModelParams::tensors`].
    pub ids: Vec<NodeId>,
}

fn affine(g: &mut Graph, x: NodeId, (w, b): (NodeId, NodeId)) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

fn check_input(config: &ModelConfig, x: &Tensor, labels: &[usize], width: usize, what: &str) -> Result<()> {
    let (rows, cols) = x.expect_matrix(what)?;
    if cols != width {
        return Err(Error::dim(format!("{what}: expected {width} columns, got {cols}")));
    }
    if rows != labels.len() {
        return Err(Error::dim(format!(
            "{what}: {rows} rows but {} condition labels",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= config.condition_count) {
        return Err(Error::contract(format!(
            "condition label {l} out of range for {} conditions",
            config.condition_count
        )));
    }
    Ok(())
}

/// Encoder on the graph: returns `(μ, log σ²)` nodes.
pub fn encode_node(
    g: &mut Graph,
    p: &ParamNodes,
    config: &ModelConfig,
    x: NodeId,
    cond: NodeId,
) -> Result<(NodeId, NodeId)> {
    let mut h = g.concat_cols(x, cond)?;
    for &layer in &p.encoder {
        let a = affine(g, h, layer)?;
        h = g.leaky_relu(a, config.activation_slope)?;
    }
    let mu = affine(g, h, p.mu_head)?;
    let logvar = affine(g, h, p.logvar_head)?;
    Ok((mu, logvar))
}

/// Decoder on the graph: returns `(y1, x̂)` nodes.
pub fn decode_node(
    g: &mut Graph,
    p: &ParamNodes,
    config: &ModelConfig,
    z: NodeId,
    cond: NodeId,
) -> Result<(NodeId, NodeId)> {
    let zc = g.concat_cols(z, cond)?;
    let a = affine(g, zc, p.g1)?;
    let y1 = g.leaky_relu(a, config.activation_slope)?;
    let mut h = y1;
    let last = p.g2.len() - 1;
    for (i, &layer) in p.g2.iter().enumerate() {
        h = affine(g, h, layer)?;
        if i < last {
            h = g.leaky_relu(h, config.activation_slope)?;
        }
    }
    Ok((y1, h))
}

/// `μ + exp(log σ² / 2) ⊙ ε` on the graph.
pub fn reparameterize_node(g: &mut Graph, mu: NodeId, logvar: NodeId, eps: NodeId) -> Result<NodeId> {
    let half = g.scale(logvar, 0.5);
    let sd = g.exp(half);
    let noise = g.mul(sd, eps)?;
    g.add(mu, noise)
}

/// Posterior parameters of `q(z | x, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mu: Tensor,
    pub logvar: Tensor,
}

pub fn encode(params: &ModelParams, config: &ModelConfig, x: &Tensor, s: &[usize]) -> Result<LatentStats> {
    check_input(config, x, s, config.input_dim, "encode")?;
    let mut g = Graph::new();
    let p = params.register_frozen(&mut g);
    let xn = g.constant(x.clone());
    let c = g.constant(one_hot(s, config.condition_count)?);
    let (mu, logvar) = encode_node(&mut g, &p, config, xn, c)?;
    Ok(LatentStats {
        mu: g.value(mu).clone(),
        logvar: g.value(logvar).clone(),
    })
}

pub fn reparameterize(stats: &LatentStats, eps: &Tensor) -> Result<Tensor> {
    if stats.mu.shape() != eps.shape() || stats.logvar.shape() != eps.shape() {
        return Err(Error::dim(format!(
            "reparameterize: mu {:?}, logvar {:?}, eps {:?}",
            stats.mu.shape(),
            stats.logvar.shape(),
            eps.shape()
        )));
    }
    let data = stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(Tensor::raw(eps.shape().to_vec(), data))
}

/// Returns `(y1, x̂)`.
pub fn decode(params: &ModelParams, config: &ModelConfig, z: &Tensor, s: &[usize]) -> Result<(Tensor, Tensor)> {
    check_input(config, z, s, config.z_dim, "decode")?;
    let mut g = Graph::new();
    let p = params.register_frozen(&mut g);
    let zn = g.constant(z.clone());
    let c = g.constant(one_hot(s, config.condition_count)?);
    let (y1, xhat) = decode_node(&mut g, &p, config, zn, c)?;
    Ok((g.value(y1).clone(), g.value(xhat).clone()))
}

/// Batch mean of `½ Σ_j (exp(lv) + μ² − 1 − lv)`.
pub fn kl_divergence(stats: &LatentStats) -> f64 {
    let rows = stats.mu.rows();
    let total: f64 = stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum();
    0.5 * total / rows as f64
}

fn mse(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::dim(format!(
            "mse: shapes {:?} and {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let s: f64 = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.numel() as f64)
}

/// `η · MSE(x, x̂) + α · KL`.
pub fn loss_cvae(x: &Tensor, xhat: &Tensor, stats: &LatentStats, alpha: f64, eta: f64) -> Result<f64> {
    Ok(eta * mse(x, xhat)? + alpha * kl_divergence(stats))
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Sum over conditions of the per-condition MSE (unweighted).
    pub recon: f64,
    /// Sum over conditions of the per-condition KL (unweighted).
    pub kl: f64,
    /// Multi-group MMD at the regularized layer (unweighted); 0 when skipped.
    pub mmd: f64,
    /// True when an MMD layer is configured but the batch held fewer than two conditions.
    pub mmd_skipped: bool,
}

/// Graph nodes of a built loss.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
    pub mmd: Option<NodeId>,
    pub mmd_skipped: bool,
}

impl LossGraph {
    pub fn parts(&self, g: &Graph) -> LossParts {
        LossParts {
            total: g.value(self.total).item(),
            recon: g.value(self.recon).item(),
            kl: g.value(self.kl).item(),
            mmd: self.mmd.map_or(0.0, |m| g.value(m).item()),
            mmd_skipped: self.mmd_skipped,
        }
    }
}

/// Row indices per condition present, in increasing condition order.
pub(crate) fn condition_groups(s: &[usize], condition_count: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); condition_count];
    for (i, &c) in s.iter().enumerate() {
        groups[c].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> Result<NodeId> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n)?;
    }
    Ok(acc)
}

/// Builds the full trVAE loss for one batch on `g`.
pub fn build_loss(
    g: &mut Graph,
    p: &ParamNodes,
    config: &ModelConfig,
    x: &Tensor,
    s: &[usize],
    eps: &Tensor,
) -> Result<LossGraph> {
    if x.rows() == 0 || s.is_empty() {
        return Err(Error::contract("loss on an empty batch"));
    }
    check_input(config, x, s, config.input_dim, "loss")?;
    if eps.shape() != [x.rows(), config.z_dim] {
        return Err(Error::dim(format!(
            "eps has shape {:?}, expected [{}, {}]",
            eps.shape(),
            x.rows(),
            config.z_dim
        )));
    }
    let xn = g.constant(x.clone());
    let cond = g.constant(one_hot(s, config.condition_count)?);
    let en = g.constant(eps.clone());
    let (mu, logvar) = encode_node(g, p, config, xn, cond)?;
    let z = reparameterize_node(g, mu, logvar, en)?;
    let (y1, xhat) = decode_node(g, p, config, z, cond)?;

    // Per-row reconstruction error and KL; condition means of rows equal
    // element means since every row has the same width.
    let diff = g.sub(xn, xhat)?;
    let sq = g.square(diff);
    let row_sq = g.mean_axis(sq, 1)?;
    let ev = g.exp(logvar);
    let mu2 = g.square(mu);
    let a = g.add(ev, mu2)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let row_kl_sum = g.sum_axis(c, 1)?;
    let row_kl = g.scale(row_kl_sum, 0.5);

    let groups = condition_groups(s, config.condition_count);
    let mut recons = Vec::with_capacity(groups.len());
    let mut kls = Vec::with_capacity(groups.len());
    for idx in &groups {
        let r = g.gather_rows(row_sq, idx)?;
        recons.push(g.mean(r));
        let k = g.gather_rows(row_kl, idx)?;
        kls.push(g.mean(k));
    }
    let recon = sum_nodes(g, &recons)?;
    let kl = sum_nodes(g, &kls)?;
    let wr = g.scale(recon, config.eta);
    let wk = g.scale(kl, config.alpha);
    let mut total = g.add(wr, wk)?;

    let layer = match config.mmd_layer {
        MmdLayer::None => None,
        MmdLayer::Z => Some(z),
        MmdLayer::Y1 => Some(y1),
    };
    let mut mmd = None;
    let mut mmd_skipped = false;
    if let Some(layer) = layer {
        if groups.len() >= 2 {
            let parts = groups
                .iter()
                .map(|idx| g.gather_rows(layer, idx))
                .collect::<Result<Vec<_>>>()?;
            let m = mmd_multigroup_node(g, &parts, &config.kernel)?;
            let beta = config.effective_beta();
            if beta != 0.0 {
                let wm = g.scale(m, beta);
                total = g.add(total, wm)?;
            }
            mmd = Some(m);
        } else {
            mmd_skipped = true;
        }
    }
    Ok(LossGraph {
        total,
        recon,
        kl,
        mmd,
        mmd_skipped,
    })
}

/// Evaluates the trVAE loss of a batch without keeping the graph.
pub fn loss_trvae(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Tensor,
    s: &[usize],
    eps: &Tensor,
) -> Result<LossParts> {
    let mut g = Graph::new();
    let p = params.register_frozen(&mut g);
    let lg = build_loss(&mut g, &p, config, x, s, eps)?;
    Ok(lg.parts(&g))
}

/// Encodes `x` under `s_src` (posterior mean, no sampling) and decodes under `s_tgt`.
pub fn predict_transform(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Tensor,
    s_src: usize,
    s_tgt: usize,
) -> Result<Tensor> {
    Ok(transform_layers(params, config, x, s_src, s_tgt)?.xhat)
}

/// Intermediate representations of a deterministic source→target pass.
#[derive(Clone, Debug)]
pub struct TransformPass {
    pub z: Tensor,
    pub y1: Tensor,
    pub xhat: Tensor,
}

pub fn transform_layers(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Tensor,
    s_src: usize,
    s_tgt: usize,
) -> Result<TransformPass> {
    for s in [s_src, s_tgt] {
        if s >= config.condition_count {
            return Err(Error::contract(format!(
                "condition label {s} out of range for {} conditions",
                config.condition_count
            )));
        }
    }
    let n = x.rows();
    let stats = encode(params, config, x, &vec![s_src; n])?;
    let (y1, xhat) = decode(params, config, &stats.mu, &vec![s_tgt; n])?;
    Ok(TransformPass {
        z: stats.mu,
        y1,
        xhat,
    })
}

/// Parameters plus the feature standardization they were trained under.
/// Inputs and outputs of its methods are in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub scaler: Standardizer,
}

impl TrainedModel {
    pub fn predict(&self, x: &Tensor, s_src: usize, s_tgt: usize) -> Result<Tensor> {
        self.check_dim(x)?;
        let xs = self.scaler.transform(x)?;
        let out = predict_transform(&self.params, &self.config, &xs, s_src, s_tgt)?;
        self.scaler.inverse(&out)
    }

    /// Posterior means and first-decoder-layer outputs, each row under its own condition.
    pub fn embed(&self, x: &Tensor, s: &[usize]) -> Result<(Tensor, Tensor)> {
        self.check_dim(x)?;
        let xs = self.scaler.transform(x)?;
        let stats = encode(&self.params, &self.config, &xs, s)?;
        let (y1, _) = decode(&self.params, &self.config, &stats.mu, s)?;
        Ok((stats.mu, y1))
    }

    fn check_dim(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::contract(format!(
                "input has {} features, model expects p = {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }
}
