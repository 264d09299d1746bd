use std::collections::BTreeMap;

use super::{kernels, Tensor};
use crate::error::{Error, Result};

/// Index of a node in its [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients of a scalar root with respect to every parameter leaf.
pub type GradientMap = BTreeMap<NodeId, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    LeakyRelu,
    Exp,
    Log,
    Square,
    SumAll,
    MeanAll,
    SumAxis,
    MeanAxis,
    ConcatCols,
    GatherRows,
    SqDist,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::MatMul,
        OpKind::LeakyRelu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Square,
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::SumAxis,
        OpKind::MeanAxis,
        OpKind::ConcatCols,
        OpKind::GatherRows,
        OpKind::SqDist,
    ];
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis(NodeId, usize),
    MeanAxis(NodeId, usize),
    ConcatCols(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    SqDist(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::MatMul(..) => OpKind::MatMul,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Square(..) => OpKind::Square,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::SumAxis(..) => OpKind::SumAxis,
            Op::MeanAxis(..) => OpKind::MeanAxis,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SqDist(..) => OpKind::SqDist,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: bool,
    needs_grad: bool,
}

/// How a binary elementwise op lines its operands up.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    /// rhs is a single row repeated over lhs rows
    RhsRow,
    LhsRow,
}

/// Append-only computation graph. Inputs of every node precede it, so the
/// node order is already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scales the backward rule of `kind` by 1.5 so gradient
    /// checks have a negative control.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, value: Tensor, param: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            param,
            needs_grad: param,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            param: false,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn broadcast(&self, a: NodeId, b: NodeId, what: &str) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if sa.len() == 2 && sb.len() == 2 && sa[1] == sb[1] {
            if sb[0] == 1 {
                return Ok(Broadcast::RhsRow);
            }
            if sa[0] == 1 {
                return Ok(Broadcast::LhsRow);
            }
        }
        Err(Error::dim(format!(
            "{what}: shapes {sa:?} and {sb:?} are not broadcastable"
        )))
    }

    fn zip(&self, a: NodeId, b: NodeId, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        match mode {
            Broadcast::Same => Tensor::raw(
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::RhsRow => {
                let n = vb.numel();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, vb.data()[i % n]))
                    .collect();
                Tensor::raw(va.shape().to_vec(), data)
            }
            Broadcast::LhsRow => {
                let n = va.numel();
                let data = vb
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| f(va.data()[i % n], y))
                    .collect();
                Tensor::raw(vb.shape().to_vec(), data)
            }
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mode = self.broadcast(a, b, "add")?;
        let v = self.zip(a, b, mode, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mode = self.broadcast(a, b, "sub")?;
        let v = self.zip(a, b, mode, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mode = self.broadcast(a, b, "mul")?;
        let v = self.zip(a, b, mode, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v, &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v, &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, &[a, b]))
    }

    /// `max(x, slope·x)` elementwise.
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::contract(format!("leaky slope {slope} outside [0, 1)")));
        }
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        Ok(self.push(Op::LeakyRelu(a, slope), v, &[a]))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v, &[a])
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(s), &[a])
    }

    /// Reduces a matrix along `axis` (0: over rows → 1×n, 1: over columns → m×1).
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = reduce_axis(self.value(a), axis)?;
        Ok(self.push(Op::SumAxis(a, axis), v, &[a]))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(a);
        let count = t.shape()[axis.min(1)] as f64;
        let v = reduce_axis(t, axis)?.map(|x| x / count);
        Ok(self.push(Op::MeanAxis(a, axis), v, &[a]))
    }

    /// Joins two matrices side by side: each output row is `[a_i, b_i]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, na) = va.expect_matrix("concat lhs")?;
        let (mb, nb) = vb.expect_matrix("concat rhs")?;
        if m != mb {
            return Err(Error::dim(format!(
                "concat: row counts {m} and {mb} differ"
            )));
        }
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let v = Tensor::raw(vec![m, na + nb], data);
        Ok(self.push(Op::ConcatCols(a, b), v, &[a, b]))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        t.expect_matrix("gather_rows")?;
        if idx.is_empty() {
            return Err(Error::contract("gather_rows: empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::dim(format!(
                "gather_rows: row {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let v = t.select_rows(idx);
        Ok(self.push(Op::GatherRows(a, idx.to_vec()), v, &[a]))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and `b`.
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, p) = va.expect_matrix("sq_dist lhs")?;
        let (n, p2) = vb.expect_matrix("sq_dist rhs")?;
        if p != p2 {
            return Err(Error::dim(format!(
                "sq_dist: feature dims {p} and {p2} differ"
            )));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let ra = va.row(i);
            for j in 0..n {
                out.push(sq_norm_diff(ra, vb.row(j)));
            }
        }
        let v = Tensor::raw(vec![m, n], out);
        Ok(self.push(Op::SqDist(a, b), v, &[a, b]))
    }

    /// Gradient of the scalar `root` with respect to every parameter leaf.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let scale = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            self.propagate(node, &g, scale, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = GradientMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.param {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(NodeId(idx), g);
            }
        }
        for (idx, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if node.param {
                out.insert(NodeId(idx), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, scale: f64, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, contrib: Tensor| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let contrib = if scale != 1.0 { contrib.map(|v| v * scale) } else { contrib };
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| self.value(id);
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let mode = self.broadcast(*a, *b, "add").expect("checked in forward");
                acc(*a, unbroadcast(g, val(*a), mode, Side::Lhs));
                acc(*b, unbroadcast(g, val(*b), mode, Side::Rhs));
            }
            Op::Sub(a, b) => {
                let mode = self.broadcast(*a, *b, "sub").expect("checked in forward");
                acc(*a, unbroadcast(g, val(*a), mode, Side::Lhs));
                acc(*b, unbroadcast(&g.map(|v| -v), val(*b), mode, Side::Rhs));
            }
            Op::Mul(a, b) => {
                let mode = self.broadcast(*a, *b, "mul").expect("checked in forward");
                if needs(*a) {
                    let ga = self.zip_grad(g, *b, mode, Side::Rhs);
                    acc(*a, unbroadcast(&ga, val(*a), mode, Side::Lhs));
                }
                if needs(*b) {
                    let gb = self.zip_grad(g, *a, mode, Side::Lhs);
                    acc(*b, unbroadcast(&gb, val(*b), mode, Side::Rhs));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt(g.data(), vb.data(), &mut da, m, n, k);
                    acc(*a, Tensor::raw(vec![m, k], da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn(va.data(), g.data(), &mut db, m, k, n);
                    acc(*b, Tensor::raw(vec![k, n], db));
                }
            }
            Op::LeakyRelu(a, slope) => {
                // Positive-branch derivative at exactly zero.
                let x = val(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv >= 0.0 { gv } else { slope * gv })
                    .collect();
                acc(*a, Tensor::raw(x.shape().to_vec(), data));
            }
            Op::Exp(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &ev)| gv * ev)
                    .collect();
                acc(*a, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::Log(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&gv, &xv)| gv / xv)
                    .collect();
                acc(*a, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::Square(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&gv, &xv)| 2.0 * xv * gv)
                    .collect();
                acc(*a, Tensor::raw(g.shape().to_vec(), data));
            }
            Op::SumAll(a) => acc(*a, Tensor::filled(val(*a).shape(), g.item())),
            Op::MeanAll(a) => {
                let t = val(*a);
                acc(*a, Tensor::filled(t.shape(), g.item() / t.numel() as f64));
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let t = val(*a);
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let div = match (&node.op, axis) {
                    (Op::MeanAxis(..), 0) => m as f64,
                    (Op::MeanAxis(..), _) => n as f64,
                    _ => 1.0,
                };
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let gv = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                        data[i * n + j] = gv / div;
                    }
                }
                acc(*a, Tensor::raw(vec![m, n], data));
            }
            Op::ConcatCols(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, na) = (va.shape()[0], va.shape()[1]);
                let nb = vb.shape()[1];
                let mut ga = Vec::with_capacity(m * na);
                let mut gb = Vec::with_capacity(m * nb);
                for i in 0..m {
                    let row = g.row(i);
                    ga.extend_from_slice(&row[..na]);
                    gb.extend_from_slice(&row[na..]);
                }
                acc(*a, Tensor::raw(vec![m, na], ga));
                acc(*b, Tensor::raw(vec![m, nb], gb));
            }
            Op::GatherRows(a, idx) => {
                let t = val(*a);
                let c = t.cols();
                let mut data = vec![0.0; t.numel()];
                for (r, &src) in idx.iter().enumerate() {
                    for (d, s) in data[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                acc(*a, Tensor::raw(t.shape().to_vec(), data));
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, p) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                let mut ga = vec![0.0; m * p];
                let mut gb = vec![0.0; n * p];
                for i in 0..m {
                    let ra = va.row(i);
                    for j in 0..n {
                        let w = 2.0 * g.data()[i * n + j];
                        if w == 0.0 {
                            continue;
                        }
                        let rb = vb.row(j);
                        for q in 0..p {
                            let d = w * (ra[q] - rb[q]);
                            ga[i * p + q] += d;
                            gb[j * p + q] -= d;
                        }
                    }
                }
                acc(*a, Tensor::raw(vec![m, p], ga));
                acc(*b, Tensor::raw(vec![n, p], gb));
            }
        }
    }

    /// `g ⊙ other`, with `other` laid out per the forward broadcast.
    fn zip_grad(&self, g: &Tensor, other: NodeId, mode: Broadcast, other_side: Side) -> Tensor {
        let o = self.value(other);
        let other_is_row = matches!(
            (mode, other_side),
            (Broadcast::RhsRow, Side::Rhs) | (Broadcast::LhsRow, Side::Lhs)
        );
        if other_is_row {
            let n = o.numel();
            let data = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &gv)| gv * o.data()[i % n])
                .collect();
            Tensor::raw(g.shape().to_vec(), data)
        } else {
            let data = g.data().iter().zip(o.data()).map(|(&a, &b)| a * b).collect();
            Tensor::raw(g.shape().to_vec(), data)
        }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lhs,
    Rhs,
}

/// Sums a full-shape gradient back down to a broadcast row operand.
fn unbroadcast(g: &Tensor, target: &Tensor, mode: Broadcast, side: Side) -> Tensor {
    let is_row = matches!(
        (mode, side),
        (Broadcast::RhsRow, Side::Rhs) | (Broadcast::LhsRow, Side::Lhs)
    );
    if !is_row {
        return g.clone();
    }
    let n = target.numel();
    let mut data = vec![0.0; n];
    for (i, &v) in g.data().iter().enumerate() {
        data[i % n] += v;
    }
    Tensor::raw(target.shape().to_vec(), data)
}

fn reduce_axis(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (m, n) = t.expect_matrix("axis reduction")?;
    match axis {
        0 => {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, v) in out.iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            Ok(Tensor::raw(vec![1, n], out))
        }
        1 => Ok(Tensor::raw(
            vec![m, 1],
            (0..m).map(|i| t.row(i).iter().sum()).collect(),
        )),
        _ => Err(Error::dim(format!("axis {axis} invalid for a matrix"))),
    }
}

pub(crate) fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads[&x].item(), 6.0);
    }

    #[test]
    fn constant_root_gives_zero_gradients() {
        let mut g = Graph::new();
        let p = g.param(t(&[vec![1.0, 2.0]]));
        let c = g.constant(t(&[vec![4.0, 5.0]]));
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&p].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let p = g.param(t(&[vec![1.0, 2.0]]));
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn leaky_relu_values_and_slope() {
        let mut g = Graph::new();
        let x = g.param(t(&[vec![3.0, -1.0]]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -0.2]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&x].data(), &[1.0, 0.2]);
        assert!(g.leaky_relu(x, 1.0).is_err());
    }

    #[test]
    fn leaky_relu_kink_uses_positive_branch() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.backward(y).unwrap()[&x].item(), 1.0);
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let e = g.exp(z);
        assert_eq!(g.value(e).item(), 1.0);

        let v = g.constant(t(&[vec![1.0, 2.0, 3.0]]));
        let m = g.mean(v);
        assert_eq!(g.value(m).item(), 2.0);

        let x = g.param(Tensor::scalar(2.0));
        let l = g.log(x);
        assert_eq!(g.backward(l).unwrap()[&x].item(), 0.5);
    }

    #[test]
    fn row_broadcast_add_and_grad() {
        let mut g = Graph::new();
        let a = g.param(t(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let b = g.param(t(&[vec![10.0, 20.0]]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 22.0, 13.0, 24.0, 15.0, 26.0]);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&b].data(), &[3.0, 3.0]);
        assert_eq!(grads[&a].data(), &[1.0; 6]);
    }

    #[test]
    fn non_broadcastable_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
        let c = g.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(g.mul(a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn axis_reductions() {
        let mut g = Graph::new();
        let a = g.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let s0 = g.sum_axis(a, 0).unwrap();
        let m1 = g.mean_axis(a, 1).unwrap();
        assert_eq!(g.value(s0).data(), &[4.0, 6.0]);
        assert_eq!(g.value(s0).shape(), &[1, 2]);
        assert_eq!(g.value(m1).data(), &[1.5, 3.5]);
        assert_eq!(g.value(m1).shape(), &[2, 1]);
    }

    #[test]
    fn concat_and_gather() {
        let mut g = Graph::new();
        let a = g.param(t(&[vec![1.0], vec![2.0]]));
        let b = g.constant(t(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let c = g.concat_cols(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = g.gather_rows(c, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(r).shape(), &[3, 3]);
        let s = g.sum(r);
        assert_eq!(g.backward(s).unwrap()[&a].data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut g = Graph::new();
        let a = g.param(t(&[vec![0.3, -1.2], vec![0.7, 2.0]]));
        let b = g.param(t(&[vec![1.1], vec![-0.4]]));
        let c = g.matmul(a, b).unwrap();
        let d = g.exp(c);
        let s = g.sum(d);
        let g1 = g.backward(s).unwrap();
        let g2 = g.backward(s).unwrap();
        for (k, v) in &g1 {
            assert_eq!(v.data(), g2[k].data());
        }
    }

    #[test]
    fn injected_fault_changes_gradient() {
        let mut g = Graph::new();
        g.inject_backward_fault(OpKind::Square);
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        assert_eq!(g.backward(y).unwrap()[&x].item(), 9.0);
    }
}
