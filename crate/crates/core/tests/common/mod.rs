//! Oracles, generators and property checks shared by the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;

use trvae::data::{read_csv, split_holdout, write_csv_to, CsvSchema, Dataset, HoldoutPlan};
use trvae::eval::pearson;
use trvae::mmd::{mmd, KernelSpec, SampleGroup};
use trvae::rng::SplitMix64;
use trvae::tensor::{grad_check, Graph, NodeId};
use trvae::train::{adam_step, make_batches, AdamState, TrainConfig};
use trvae::Tensor;

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Scalar triple loop over pairs and kernel scales.
pub fn mmd_naive(a: &Tensor, b: &Tensor, gammas: &[f64]) -> f64 {
    let k = |x: &[f64], y: &[f64]| -> f64 {
        let mut total = 0.0;
        for &g in gammas {
            let mut d = 0.0;
            for t in 0..x.len() {
                d += (x[t] - y[t]) * (x[t] - y[t]);
            }
            total += (-g * d).exp();
        }
        total
    };
    let mean = |p: &Tensor, q: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..p.rows() {
            for j in 0..q.rows() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

/// Implementation vs naive loop, and the nonnegativity floor.
pub fn check_mmd_oracle(n0: usize, n1: usize, p: usize, seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let a = random_matrix(&mut rng, n0, p);
    let b = random_matrix(&mut rng, n1, p);
    let spec = KernelSpec::default();
    let got = mmd(
        &SampleGroup::new(a.clone(), 0).unwrap(),
        &SampleGroup::new(b.clone(), 1).unwrap(),
        &spec,
    )
    .map_err(|e| e.to_string())?;
    let want = mmd_naive(&a, &b, &spec.gammas);
    ensure((got - want).abs() <= 1e-10, || format!("n0={n0} n1={n1} p={p}: {got} vs oracle {want}"))?;
    ensure(got >= -1e-12, || format!("negative mmd {got}"))?;
    let same = SampleGroup::new(a, 0).unwrap();
    let zero = mmd(&same, &same, &spec).map_err(|e| e.to_string())?;
    ensure(zero == 0.0, || format!("MMD(X, X) = {zero}"))
}

pub fn check_pearson_affine(a: &[f64], b: &[f64], scale: f64, shift: f64) -> Check {
    let base = match pearson(a, b) {
        Ok(r) => r,
        Err(_) => return Ok(()),
    };
    let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
    let b2: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
    for (x, y) in [(&a2, &b.to_vec()), (&a.to_vec(), &b2)] {
        let r = pearson(x, y).map_err(|e| e.to_string())?;
        ensure((r - base).abs() <= 1e-12, || format!("{r} vs {base} (scale {scale}, shift {shift})"))?;
    }
    Ok(())
}

pub fn labelled_dataset(rows: &[(usize, usize)], p: usize, domains: usize, conditions: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    Dataset::new(
        random_matrix(&mut rng, rows.len(), p),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.0).collect(),
        (0..p).map(|j| format!("f{j}")).collect(),
        (0..conditions).map(|c| format!("c{c}")).collect(),
        (0..domains).map(|d| format!("d{d}")).collect(),
    )
    .unwrap()
}

/// Disjoint, exhaustive and order-stable, with bit-identical feature rows.
pub fn check_split_partition(ds: &Dataset, plan: &HoldoutPlan) -> Check {
    let (train, held) = split_holdout(ds, plan).map_err(|e| e.to_string())?;
    ensure(train.len() + held.len() == ds.len(), || "row counts do not sum".into())?;
    let (mut ti, mut hi) = (0, 0);
    for i in 0..ds.len() {
        let (part, k) = if plan.contains(ds.domain[i], ds.condition[i]) {
            hi += 1;
            (&held, hi - 1)
        } else {
            ti += 1;
            (&train, ti - 1)
        };
        let same = part.x.row(k).iter().zip(ds.x.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same && part.domain[k] == ds.domain[i] && part.condition[k] == ds.condition[i], || {
            format!("row {i} misplaced")
        })?;
    }
    Ok(())
}

/// CSV → load → split leaves every feature value bit-identical.
pub fn check_csv_split_preserves(ds: &Dataset, plan: &HoldoutPlan) -> Check {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf, &CsvSchema::default()).map_err(|e| e.to_string())?;
    let loaded = read_csv(buf.as_slice(), &CsvSchema::default()).map_err(|e| e.to_string())?;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&loaded.x) == bits(&ds.x), || "csv round trip changed values".into())?;
    let index = |names: &[String], name: &String| names.iter().position(|n| n == name);
    let cells: Vec<(usize, usize)> = plan
        .held_out
        .iter()
        .filter_map(|c| {
            let d = index(&loaded.domain_names, &ds.domain_names[c.domain])?;
            let s = index(&loaded.condition_names, &ds.condition_names[c.condition])?;
            Some((d, s))
        })
        .collect();
    let (a, b) = split_holdout(&loaded, &HoldoutPlan::new(&cells)).map_err(|e| e.to_string())?;
    let (c, d) = split_holdout(ds, plan).map_err(|e| e.to_string())?;
    ensure(bits(&a.x) == bits(&c.x) && bits(&b.x) == bits(&d.x), || "split after load differs".into())
}

/// Every index exactly once, no batch above the requested size, and each
/// batch holds every condition in proportion to within two rows.
pub fn check_batch_partition(conditions: &[usize], batch_size: usize, seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let batches = make_batches(conditions, batch_size, &mut rng).map_err(|e| e.to_string())?;
    let mut seen = vec![0usize; conditions.len()];
    for b in &batches {
        ensure(!b.is_empty() && b.len() <= batch_size, || format!("batch of {} (limit {batch_size})", b.len()))?;
        for &i in b {
            seen[i] += 1;
        }
        let classes = conditions.iter().max().map_or(0, |m| m + 1);
        for c in 0..classes {
            let total = conditions.iter().filter(|&&x| x == c).count() as f64;
            let expect = total * b.len() as f64 / conditions.len() as f64;
            let got = b.iter().filter(|&&i| conditions[i] == c).count() as f64;
            ensure((got - expect).abs() <= 2.0, || {
                format!("condition {c}: {got} rows in batch of {}, expected ~{expect:.2}", b.len())
            })?;
        }
    }
    ensure(seen.iter().all(|&c| c == 1), || "indices not covered exactly once".into())
}

/// A zero gradient leaves parameters unchanged, from a fresh state and
/// after prior steps have populated the moments with zeros.
pub fn check_adam_fixed_point(values: &[f64], lr: f64) -> Check {
    let p = Tensor::new(vec![1, values.len()], values.to_vec()).unwrap();
    let zero = Tensor::zeros(&[1, values.len()]);
    let cfg = TrainConfig {
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(&[&p]);
    let mut params = vec![p.clone()];
    for _ in 0..3 {
        let (next, s) = adam_step(&params, std::slice::from_ref(&zero), &state, &cfg).map_err(|e| e.to_string())?;
        params = next;
        state = s;
    }
    ensure(params[0] == p, || "zero gradient moved parameters".into())
}

pub fn check_matmul_assoc(seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let (a, b, c) = (
        random_matrix(&mut rng, 4, 4),
        random_matrix(&mut rng, 4, 4),
        random_matrix(&mut rng, 4, 4),
    );
    let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
    let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
    let scale = left.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let err = left
        .data()
        .iter()
        .zip(right.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale;
    ensure(err < 1e-12, || format!("relative error {err}"))
}

type Builder = fn(&mut Graph, &[NodeId]) -> trvae::Result<NodeId>;

/// Scalar losses exercising each op; shapes of the inputs per entry.
pub fn op_cases() -> Vec<(&'static str, Vec<[usize; 2]>, Builder)> {
    fn reduce(g: &mut Graph, y: NodeId) -> trvae::Result<NodeId> {
        let sq = g.square(y);
        Ok(g.sum(sq))
    }
    vec![
        ("add", vec![[3, 4], [1, 4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            reduce(g, y)
        }),
        ("sub", vec![[3, 4], [3, 4]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            reduce(g, y)
        }),
        ("mul", vec![[3, 4], [1, 4]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            reduce(g, y)
        }),
        ("scale", vec![[2, 3]], |g, v| {
            let y = g.scale(v[0], -1.7);
            reduce(g, y)
        }),
        ("add_scalar", vec![[2, 3]], |g, v| {
            let y = g.add_scalar(v[0], 0.4);
            reduce(g, y)
        }),
        ("matmul", vec![[3, 4], [4, 2]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            reduce(g, y)
        }),
        ("leaky_relu", vec![[3, 4]], |g, v| {
            let y = g.leaky_relu(v[0], 0.2)?;
            reduce(g, y)
        }),
        ("exp", vec![[2, 3]], |g, v| {
            let y = g.exp(v[0]);
            Ok(g.sum(y))
        }),
        ("log", vec![[2, 3]], |g, v| {
            let sq = g.square(v[0]);
            let pos = g.add_scalar(sq, 1.0);
            let y = g.log(pos);
            Ok(g.sum(y))
        }),
        ("mean", vec![[3, 4]], |g, v| {
            let sq = g.square(v[0]);
            Ok(g.mean(sq))
        }),
        ("sum_axis_0", vec![[3, 4]], |g, v| {
            let y = g.sum_axis(v[0], 0)?;
            reduce(g, y)
        }),
        ("sum_axis_1", vec![[3, 4]], |g, v| {
            let y = g.sum_axis(v[0], 1)?;
            reduce(g, y)
        }),
        ("mean_axis_0", vec![[3, 4]], |g, v| {
            let y = g.mean_axis(v[0], 0)?;
            reduce(g, y)
        }),
        ("mean_axis_1", vec![[3, 4]], |g, v| {
            let y = g.mean_axis(v[0], 1)?;
            reduce(g, y)
        }),
        ("concat_cols", vec![[3, 2], [3, 3]], |g, v| {
            let y = g.concat_cols(v[0], v[1])?;
            let w = g.constant(Tensor::new(vec![5, 1], vec![1.0, -2.0, 0.5, 3.0, -1.0]).unwrap());
            let y = g.matmul(y, w)?;
            reduce(g, y)
        }),
        ("gather_rows", vec![[4, 3]], |g, v| {
            let y = g.gather_rows(v[0], &[2, 0, 2])?;
            reduce(g, y)
        }),
        ("sq_dist", vec![[3, 2], [4, 2]], |g, v| {
            let d = g.sq_dist(v[0], v[1])?;
            let k = g.scale(d, -0.5);
            let y = g.exp(k);
            Ok(g.sum(y))
        }),
    ]
}

/// Draws a point, nudging leaky-relu inputs away from the kink by more than 10·h.
pub fn op_point(shapes: &[[usize; 2]], seed: u64, h: f64) -> Vec<Tensor> {
    let mut rng = SplitMix64::new(seed);
    shapes
        .iter()
        .map(|s| {
            let data = (0..s[0] * s[1])
                .map(|_| {
                    let v = rng.normal();
                    if v.abs() < 20.0 * h {
                        v.signum() * 20.0 * h + v
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::new(s.to_vec(), data).unwrap()
        })
        .collect()
}

pub const OP_STEP: f64 = 1e-4;

/// 10 seeded points per op, each below 1e-5.
pub fn check_all_ops(points: u64) -> Check {
    for (name, shapes, build) in op_cases() {
        for k in 0..points {
            let point = op_point(&shapes, 1000 + k, OP_STEP);
            let r = grad_check(build, &point, OP_STEP).map_err(|e| format!("{name}: {e}"))?;
            ensure(r.max_rel_error < 1e-5, || format!("{name} point {k}: {r:?}"))?;
        }
    }
    Ok(())
}

pub fn holdout_strategy() -> impl Strategy<Value = (Vec<(usize, usize)>, HoldoutPlan, usize, usize)> {
    (1usize..4, 2usize..4).prop_flat_map(|(domains, conditions)| {
        let rows = prop::collection::vec((0..domains, 0..conditions), 1..40);
        let cells = prop::collection::vec((0..domains, 1..conditions), 0..4);
        (rows, cells).prop_map(move |(mut rows, cells)| {
            rows.insert(0, (0, 0));
            (rows, HoldoutPlan::new(&cells), domains, conditions)
        })
    })
}
