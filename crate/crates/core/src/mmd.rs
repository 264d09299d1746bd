//! Multi-scale RBF kernels and the biased (V-statistic) maximum mean
//! discrepancy estimator.
//!
//! With kernel `k(x, x') = Σ_i exp(-γ_i ‖x - x'‖²)`,
//!
//! ```text
//! MMD(X, X') = mean_{n,m} k(x_n, x_m) + mean_{n,m} k(x'_n, x'_m) - 2 mean_{n,m} k(x_n, x'_m)
//! ```
//!
//! Self-pairs are included, so the estimate is a squared RKHS norm and
//! never negative. Singleton groups are accepted; the estimate is then
//! very noisy.
//!
//! Plain-`f64` functions serve reporting; [`mmd_node`] and
//! [`mmd_multigroup_node`] build the same quantity on a [`Graph`] so it can
//! be used as a differentiable loss term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sq_norm_diff, Graph, NodeId, Tensor};

/// The bandwidth set `γ_1..γ_l` of a multi-scale RBF kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub gammas: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            gammas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
        }
    }
}

impl KernelSpec {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        let spec = Self { gammas };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(gamma: f64) -> Result<Self> {
        Self::new(vec![gamma])
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::contract("kernel needs at least one bandwidth"));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::contract(format!("kernel bandwidth {g} must be positive")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    fn eval_sq_dist(&self, d2: f64) -> f64 {
        self.gammas.iter().map(|g| (-g * d2).exp()).sum()
    }
}

/// Rows of one condition (or any labelled sample set).
#[derive(Clone, Debug)]
pub struct SampleGroup {
    pub matrix: Tensor,
    pub label: usize,
}

impl SampleGroup {
    pub fn new(matrix: Tensor, label: usize) -> Result<Self> {
        let (n, _) = matrix.expect_matrix("sample group")?;
        if n == 0 {
            return Err(Error::contract("sample group is empty"));
        }
        Ok(Self { matrix, label })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// `exp(-γ ‖x - x'‖²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "rbf_kernel: vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::contract(format!("gamma {gamma} must be positive")));
    }
    Ok((-gamma * sq_norm_diff(x, y)).exp())
}

pub fn multi_scale_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "multi_scale_kernel: vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.eval_sq_dist(sq_norm_diff(x, y)))
}

fn kernel_mean(a: &Tensor, b: &Tensor, spec: &KernelSpec) -> f64 {
    let (n0, n1) = (a.rows(), b.rows());
    let mut total = 0.0;
    for i in 0..n0 {
        let ra = a.row(i);
        let mut row_sum = 0.0;
        for j in 0..n1 {
            row_sum += spec.eval_sq_dist(sq_norm_diff(ra, b.row(j)));
        }
        total += row_sum;
    }
    total / (n0 as f64 * n1 as f64)
}

/// Biased MMD estimate between two groups.
pub fn mmd(a: &SampleGroup, b: &SampleGroup, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    check_pair(a, b)?;
    let kaa = kernel_mean(&a.matrix, &a.matrix, spec);
    let kbb = kernel_mean(&b.matrix, &b.matrix, spec);
    let kab = kernel_mean(&a.matrix, &b.matrix, spec);
    Ok(kaa + kbb - 2.0 * kab)
}

/// Sum of [`mmd`] over all unordered pairs of groups.
pub fn mmd_multigroup(groups: &[SampleGroup], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if groups.iter().filter(|g| !g.is_empty()).count() < 2 {
        return Err(Error::contract("mmd_multigroup needs at least two non-empty groups"));
    }
    // Cache within-group means; they appear in every pair.
    let within: Vec<f64> = groups
        .iter()
        .map(|g| kernel_mean(&g.matrix, &g.matrix, spec))
        .collect();
    let mut total = 0.0;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            check_pair(&groups[i], &groups[j])?;
            let kab = kernel_mean(&groups[i].matrix, &groups[j].matrix, spec);
            total += within[i] + within[j] - 2.0 * kab;
        }
    }
    Ok(total)
}

fn check_pair(a: &SampleGroup, b: &SampleGroup) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("mmd: empty sample group"));
    }
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "mmd: feature dims {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean multi-scale kernel value between rows of `a` and `b`, on the graph.
fn kernel_mean_node(g: &mut Graph, a: NodeId, b: NodeId, spec: &KernelSpec) -> Result<NodeId> {
    let d2 = g.sq_dist(a, b)?;
    let mut acc: Option<NodeId> = None;
    for &gamma in &spec.gammas {
        let scaled = g.scale(d2, -gamma);
        let k = g.exp(scaled);
        acc = Some(match acc {
            Some(prev) => g.add(prev, k)?,
            None => k,
        });
    }
    Ok(g.mean(acc.expect("validated non-empty")))
}

/// Differentiable [`mmd`] between the row sets of two graph nodes.
pub fn mmd_node(g: &mut Graph, a: NodeId, b: NodeId, spec: &KernelSpec) -> Result<NodeId> {
    spec.validate()?;
    let kaa = kernel_mean_node(g, a, a, spec)?;
    let kbb = kernel_mean_node(g, b, b, spec)?;
    let kab = kernel_mean_node(g, a, b, spec)?;
    let within = g.add(kaa, kbb)?;
    let cross = g.scale(kab, 2.0);
    g.sub(within, cross)
}

/// Differentiable [`mmd_multigroup`] over graph nodes.
pub fn mmd_multigroup_node(g: &mut Graph, groups: &[NodeId], spec: &KernelSpec) -> Result<NodeId> {
    spec.validate()?;
    if groups.len() < 2 {
        return Err(Error::contract("mmd_multigroup needs at least two groups"));
    }
    let within: Vec<NodeId> = groups
        .iter()
        .map(|&x| kernel_mean_node(g, x, x, spec))
        .collect::<Result<_>>()?;
    let mut total: Option<NodeId> = None;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let kab = kernel_mean_node(g, groups[i], groups[j], spec)?;
            let w = g.add(within[i], within[j])?;
            let cross = g.scale(kab, 2.0);
            let pair = g.sub(w, cross)?;
            total = Some(match total {
                Some(t) => g.add(t, pair)?,
                None => pair,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}
