//! Scoring out-of-sample transformations and inspecting the learned layers.
//!
//! A held-out source population is transformed to the target condition and
//! compared with the true target population through the Pearson correlation
//! of per-feature means and of per-feature variances, in original units.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mmd::{mmd, SampleGroup};
use crate::model::{condition_groups, TrainedModel};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub r_mean: f64,
    pub r_var: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub means_pred: Vec<f64>,
    pub means_true: Vec<f64>,
    pub vars_pred: Vec<f64>,
    pub vars_true: Vec<f64>,
}

/// Column means and unbiased (n − 1) variances.
pub fn per_dim_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p) = x.expect_matrix("per_dim_stats")?;
    if n < 2 {
        return Err(Error::contract(format!(
            "per-feature variance needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= (n - 1) as f64);
    Ok((mean, var))
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "pearson: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::contract("pearson needs at least 2 points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric(
            "pearson: correlation undefined for a constant input".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Scores a predicted population against a true one.
pub fn score_prediction(pred: &Tensor, truth: &Tensor) -> Result<EvalReport> {
    if pred.cols() != truth.cols() {
        return Err(Error::contract(format!(
            "prediction has {} features, truth has {}",
            pred.cols(),
            truth.cols()
        )));
    }
    let (means_pred, vars_pred) = per_dim_stats(pred)?;
    let (means_true, vars_true) = per_dim_stats(truth)?;
    Ok(EvalReport {
        r_mean: pearson(&means_pred, &means_true)?,
        r_var: pearson(&vars_pred, &vars_true)?,
        n_source: pred.rows(),
        n_target: truth.rows(),
        means_pred,
        means_true,
        vars_pred,
        vars_true,
    })
}

fn domains(ds: &Dataset) -> BTreeSet<&str> {
    ds.domain.iter().map(|&d| ds.domain_names[d].as_str()).collect()
}

/// Transforms `source` (all condition `s_src`) to `s_tgt` and scores it against `truth`.
pub fn evaluate_transform(
    model: &TrainedModel,
    source: &Dataset,
    truth: &Dataset,
    s_src: usize,
    s_tgt: usize,
) -> Result<EvalReport> {
    if source.dim() != model.config.input_dim || truth.dim() != model.config.input_dim {
        return Err(Error::contract(format!(
            "feature counts: model {}, source {}, truth {}",
            model.config.input_dim,
            source.dim(),
            truth.dim()
        )));
    }
    if let Some(i) = source.condition.iter().position(|&c| c != s_src) {
        return Err(Error::contract(format!(
            "source row {i} has condition {}, expected {s_src}",
            source.condition[i]
        )));
    }
    if let Some(i) = truth.condition.iter().position(|&c| c != s_tgt) {
        return Err(Error::contract(format!(
            "truth row {i} has condition {}, expected {s_tgt}",
            truth.condition[i]
        )));
    }
    if domains(source) != domains(truth) {
        return Err(Error::contract("source and truth cover different domains"));
    }
    let pred = model.predict(&source.x, s_src, s_tgt)?;
    score_prediction(&pred, &truth.x)
}

/// Which representation to inspect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Z,
    Y1,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layer::Z => "z",
            Layer::Y1 => "y1",
        })
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(Layer::Z),
            "y1" => Ok(Layer::Y1),
            other => Err(Error::config("layer", format!("unknown layer `{other}` (expected z or y1)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMmd {
    pub condition_a: usize,
    pub condition_b: usize,
    pub mmd: f64,
}

/// Cross-condition MMD at the bottleneck and at the first decoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub z: Vec<PairMmd>,
    pub y1: Vec<PairMmd>,
}

impl CompactnessReport {
    pub fn total(&self, layer: Layer) -> f64 {
        let pairs = match layer {
            Layer::Z => &self.z,
            Layer::Y1 => &self.y1,
        };
        pairs.iter().map(|p| p.mmd).sum()
    }
}

fn pairwise(rep: &Tensor, groups: &[Vec<usize>], labels: &[usize], model: &TrainedModel) -> Result<Vec<PairMmd>> {
    let sets: Vec<SampleGroup> = groups
        .iter()
        .zip(labels)
        .map(|(idx, &l)| SampleGroup::new(rep.select_rows(idx), l))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            out.push(PairMmd {
                condition_a: sets[i].label,
                condition_b: sets[j].label,
                mmd: mmd(&sets[i], &sets[j], &model.config.kernel)?,
            });
        }
    }
    Ok(out)
}

/// Encodes every row (posterior mean) under its own condition and reports
/// MMD between condition groups at `z` and `y1`.
pub fn compactness_report(model: &TrainedModel, ds: &Dataset) -> Result<CompactnessReport> {
    let groups = condition_groups(&ds.condition, ds.condition_count());
    if groups.len() < 2 {
        return Err(Error::contract("compactness needs at least two conditions"));
    }
    let labels: Vec<usize> = groups.iter().map(|g| ds.condition[g[0]]).collect();
    let (z, y1) = model.embed(&ds.x, &ds.condition)?;
    Ok(CompactnessReport {
        z: pairwise(&z, &groups, &labels, model)?,
        y1: pairwise(&y1, &groups, &labels, model)?,
    })
}

/// Layer activations as CSV: `dim_0..dim_{k-1},condition,domain`, dataset order.
pub fn export_embeddings(model: &TrainedModel, ds: &Dataset, layer: Layer, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(model, ds, layer, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_embeddings<W: std::io::Write>(model: &TrainedModel, ds: &Dataset, layer: Layer, writer: W) -> Result<()> {
    let (z, y1) = model.embed(&ds.x, &ds.condition)?;
    let rep = match layer {
        Layer::Z => z,
        Layer::Y1 => y1,
    };
    let io = |e: csv::Error| Error::Io {
        path: "<embedding>".into(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let k = rep.cols();
    let mut header: Vec<String> = (0..k).map(|j| format!("dim_{j}")).collect();
    header.push("condition".into());
    header.push("domain".into());
    w.write_record(&header).map_err(io)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = rep.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.condition_names[ds.condition[i]].clone());
        rec.push(ds.domain_names[ds.domain[i]].clone());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<embedding>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shift, Standardizer, SyntheticSpec};
    use crate::model::{ModelConfig, ModelParams};
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stats_values() {
        let x = Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, 4.0]]).unwrap();
        let (m, v) = per_dim_stats(&x).unwrap();
        assert_eq!(m, vec![2.0, 4.0]);
        assert_eq!(v, vec![2.0, 0.0]);
        assert!(per_dim_stats(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn stats_row_permutation_invariant() {
        let x = Tensor::from_rows(&[vec![1.0, -4.0], vec![3.5, 4.0], vec![0.25, 9.0]]).unwrap();
        let y = x.select_rows(&[2, 0, 1]);
        let (m1, v1) = per_dim_stats(&x).unwrap();
        let (m2, v2) = per_dim_stats(&y).unwrap();
        for (a, b) in m1.iter().chain(&v1).zip(m2.iter().chain(&v2)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn pearson_values() {
        let a = [1.0, 2.0, 3.0, 7.0];
        let b2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&a, &b2).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&a, &neg).unwrap(), -1.0, epsilon = 1e-15);
        // centered a = [-1, 0, 1], b = [-4/3, -1/3, 5/3]: sab = 3, saa = 2, sbb = 14/3
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r, 3.0 / (2.0f64 * 14.0 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.9820, epsilon = 5e-5);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    fn tiny_model(p: usize) -> TrainedModel {
        let config = ModelConfig {
            encoder_hidden: vec![8],
            z_dim: 3,
            g1_dim: 5,
            g2_hidden: vec![8],
            ..ModelConfig::new(p, 2)
        };
        TrainedModel {
            params: ModelParams::init(&config, &mut SplitMix64::new(1)),
            config,
            scaler: Standardizer::identity(p),
        }
    }

    fn tiny_data() -> Dataset {
        synth_shift(&SyntheticSpec {
            dims: 6,
            samples_per_cell: 20,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn self_comparison_is_perfect() {
        let model = tiny_model(6);
        let ds = tiny_data();
        let src = ds.cell(1, 0);
        let pred = model.predict(&src.x, 0, 1).unwrap();
        let r = score_prediction(&pred, &pred).unwrap();
        assert_abs_diff_eq!(r.r_mean, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r_var, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shuffled_truth_is_uncorrelated() {
        // Permutation null: independent per-feature means over p = 100.
        let mut rng = SplitMix64::new(17);
        let p = 100;
        let mut rs = Vec::new();
        for _ in 0..20 {
            let a: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let mut b = a.clone();
            rng.shuffle(&mut b);
            rs.push(pearson(&a, &b).unwrap());
        }
        rs.sort_by(f64::total_cmp);
        assert!(rs[10].abs() < 0.3, "{rs:?}");
    }

    #[test]
    fn evaluate_checks_labels() {
        let model = tiny_model(6);
        let ds = tiny_data();
        let src = ds.cell(1, 0);
        let tgt = ds.cell(1, 1);
        assert!(evaluate_transform(&model, &src, &tgt, 0, 1).is_ok());
        assert!(evaluate_transform(&model, &tgt, &tgt, 0, 1).is_err());
        assert!(evaluate_transform(&model, &src, &ds.cell(2, 1), 0, 1).is_err());
        let r1 = evaluate_transform(&model, &src, &tgt, 0, 1).unwrap();
        let r2 = evaluate_transform(&model, &src, &tgt, 0, 1).unwrap();
        assert_eq!(r1.r_mean.to_bits(), r2.r_mean.to_bits());
    }

    #[test]
    fn zero_params_have_zero_compactness() {
        let mut model = tiny_model(6);
        model.params = ModelParams::zeros(&model.config);
        let rep = compactness_report(&model, &tiny_data()).unwrap();
        assert_eq!(rep.total(Layer::Z), 0.0);
        assert_eq!(rep.total(Layer::Y1), 0.0);
    }

    #[test]
    fn compactness_nonnegative_and_needs_two_conditions() {
        let model = tiny_model(6);
        let ds = tiny_data();
        let rep = compactness_report(&model, &ds).unwrap();
        assert!(rep.z.iter().chain(&rep.y1).all(|p| p.mmd >= 0.0));
        assert!(compactness_report(&model, &ds.cell(0, 0)).is_err());
    }

    #[test]
    fn embedding_export_shape_and_determinism() {
        let model = tiny_model(6);
        let ds = tiny_data();
        let mut a = Vec::new();
        write_embeddings(&model, &ds, Layer::Z, &mut a).unwrap();
        let mut b = Vec::new();
        write_embeddings(&model, &ds, Layer::Z, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "dim_0,dim_1,dim_2,condition,domain");
        assert_eq!(lines.count(), ds.len());
        let mut c = Vec::new();
        write_embeddings(&model, &ds, Layer::Y1, &mut c).unwrap();
        assert!(String::from_utf8(c).unwrap().starts_with("dim_0,dim_1,dim_2,dim_3,dim_4,condition"));
    }
}
