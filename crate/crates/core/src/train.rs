//! Deterministic minibatch training with Adam.
//!
//! One run draws three independent SplitMix64 streams from the seed:
//! parameter initialization, batch shuffling, and reparameterization noise.
//! Given the dataset and both configs, the output is bit-reproducible.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_loss, ModelConfig, ModelParams};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::adam_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,
    /// Stop after this many epochs without improvement of the epoch-mean total loss.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn adam_betas() -> (f64, f64) {
        (0.9, 0.999)
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            seed: 0,
            adam_betas: defaults::adam_betas(),
            adam_epsilon: defaults::adam_epsilon(),
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(Error::config("adam_betas", "both must lie in (0, 1)"));
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    /// In-place bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], config: &TrainConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::contract(format!(
                    "adam: tensor {i} param {:?} grad {:?} moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        let (b1, b2) = config.adam_betas;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = config.learning_rate;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + config.adam_epsilon);
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::update`]: returns updated copies.
pub fn adam_step(
    params: &[Tensor],
    grads: &[Tensor],
    state: &AdamState,
    config: &TrainConfig,
) -> Result<(Vec<Tensor>, AdamState)> {
    let mut p = params.to_vec();
    let mut s = state.clone();
    s.update(&mut p, grads, config)?;
    Ok((p, s))
}

/// Stratified shuffled batches.
///
/// Each condition's rows are shuffled, then the k-th of `n_c` rows of
/// condition `c` is placed at fractional position `(2k+1)/(2n_c)` and the
/// merged order is cut into consecutive batches. Any window of the merged
/// order holds each condition in proportion, ±1 row.
pub fn make_batches(conditions: &[usize], batch_size: usize, rng: &mut SplitMix64) -> Result<Vec<Vec<usize>>> {
    let n = conditions.len();
    if n == 0 {
        return Err(Error::contract("cannot batch an empty dataset"));
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::contract(format!(
            "batch size {batch_size} invalid for {n} rows"
        )));
    }
    let classes = conditions.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in conditions.iter().enumerate() {
        by_class[c].push(i);
    }
    // (numerator, denominator, class, index)
    let mut keyed: Vec<(u128, u128, usize, usize)> = Vec::with_capacity(n);
    for (c, rows) in by_class.iter_mut().enumerate() {
        rng.shuffle(rows);
        let nc = rows.len() as u128;
        for (k, &i) in rows.iter().enumerate() {
            keyed.push((2 * k as u128 + 1, 2 * nc, c, i));
        }
    }
    keyed.sort_by(|a, b| match (a.0 * b.1).cmp(&(b.0 * a.1)) {
        Ordering::Equal => a.2.cmp(&b.2),
        o => o,
    });
    let order: Vec<usize> = keyed.into_iter().map(|k| k.3).collect();
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Loss components of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step index.
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub mmd: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<StepRecord>,
}

impl LossTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn epochs(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch + 1)
    }

    /// Mean of each component over the steps of every epoch.
    pub fn epoch_means(&self) -> Vec<StepRecord> {
        let mut out: Vec<StepRecord> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for r in &self.records {
            if out.last().is_none_or(|o| o.epoch != r.epoch) {
                out.push(StepRecord {
                    epoch: r.epoch,
                    step: r.step,
                    total: 0.0,
                    recon: 0.0,
                    kl: 0.0,
                    mmd: 0.0,
                });
                counts.push(0);
            }
            let o = out.last_mut().expect("pushed");
            o.total += r.total;
            o.recon += r.recon;
            o.kl += r.kl;
            o.mmd += r.mmd;
            *counts.last_mut().expect("pushed") += 1;
        }
        for (o, &c) in out.iter_mut().zip(&counts) {
            let c = c as f64;
            o.total /= c;
            o.recon /= c;
            o.kl /= c;
            o.mmd /= c;
        }
        out
    }

    /// CSV with header `epoch,step,total,recon,kl,mmd`; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,step,total,recon,kl,mmd")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:?},{:?},{:?},{:?}",
                r.epoch, r.step, r.total, r.recon, r.kl, r.mmd
            )?;
        }
        Ok(())
    }
}

/// Stream tags under the run seed.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

pub fn init_params(model: &ModelConfig, seed: u64) -> ModelParams {
    let mut root = SplitMix64::new(seed);
    let mut init = root.fork(INIT_STREAM);
    ModelParams::init(model, &mut init)
}

/// Trains from a seeded initialization; returns the final parameters and every step's losses.
pub fn train(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<(ModelParams, LossTrace)> {
    model.validate()?;
    cfg.validate()?;
    if ds.dim() != model.input_dim {
        return Err(Error::dim(format!(
            "dataset has {} features, model expects {}",
            ds.dim(),
            model.input_dim
        )));
    }
    if ds.condition_count() > model.condition_count {
        return Err(Error::contract(format!(
            "dataset has {} conditions, model supports {}",
            ds.condition_count(),
            model.condition_count
        )));
    }
    if ds.is_empty() {
        return Err(Error::contract("training set is empty"));
    }

    let mut root = SplitMix64::new(cfg.seed);
    let mut init = root.fork(INIT_STREAM);
    let mut batch_rng = root.fork(BATCH_STREAM);
    let mut noise = root.fork(NOISE_STREAM);

    let params0 = ModelParams::init(model, &mut init);
    let mut flat: Vec<Tensor> = params0.tensors().into_iter().cloned().collect();
    let mut adam = AdamState::new(&params0.tensors());
    let mut trace = LossTrace::default();
    let mut step = 0usize;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let batch_size = cfg.batch_size.min(ds.len());

    for epoch in 0..cfg.epochs {
        let batches = make_batches(&ds.condition, batch_size, &mut batch_rng)?;
        let mut epoch_total = 0.0;
        for idx in &batches {
            let x = ds.x.select_rows(idx);
            let s: Vec<usize> = idx.iter().map(|&i| ds.condition[i]).collect();
            let eps = Tensor::raw(
                vec![idx.len(), model.z_dim],
                (0..idx.len() * model.z_dim).map(|_| noise.normal()).collect(),
            );
            let current = ModelParams::from_tensors(model, flat)?;
            let mut g = Graph::new();
            let nodes = current.register(&mut g);
            let lg = build_loss(&mut g, &nodes, model, &x, &s, &eps)?;
            let parts = lg.parts(&g);
            if !parts.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {step}: total={} recon={} kl={} mmd={}",
                    parts.total, parts.recon, parts.kl, parts.mmd
                )));
            }
            let mut grads = g.backward(lg.total)?;
            let grad_list: Vec<Tensor> = nodes
                .ids
                .iter()
                .map(|id| grads.remove(id).expect("every parameter has a gradient"))
                .collect();
            drop(g);
            flat = current.tensors().into_iter().cloned().collect();
            adam.update(&mut flat, &grad_list, cfg)?;
            trace.records.push(StepRecord {
                epoch,
                step,
                total: parts.total,
                recon: parts.recon,
                kl: parts.kl,
                mmd: parts.mmd,
            });
            epoch_total += parts.total;
            step += 1;
        }
        if let Some(patience) = cfg.early_stop_patience {
            let mean = epoch_total / batches.len() as f64;
            if mean < best {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok((ModelParams::from_tensors(model, flat)?, trace))
}
