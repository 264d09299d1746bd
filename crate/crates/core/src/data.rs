//! Datasets: CSV ingestion, the synthetic out-of-sample benchmark, holdout
//! splits and feature standardization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Observations with a condition label and a domain label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n × p]`; may have zero rows.
    pub x: Tensor,
    pub condition: Vec<usize>,
    pub domain: Vec<usize>,
    pub feature_names: Vec<String>,
    pub condition_names: Vec<String>,
    pub domain_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        condition: Vec<usize>,
        domain: Vec<usize>,
        feature_names: Vec<String>,
        condition_names: Vec<String>,
        domain_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            x,
            condition,
            domain,
            feature_names,
            condition_names,
            domain_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.x.shape().len() != 2 {
            return Err(Error::dim("dataset matrix must be 2-D"));
        }
        if self.condition.len() != n || self.domain.len() != n {
            return Err(Error::dim(format!(
                "{n} rows but {} condition and {} domain labels",
                self.condition.len(),
                self.domain.len()
            )));
        }
        if self.feature_names.len() != self.x.shape()[1] {
            return Err(Error::dim(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.x.shape()[1]
            )));
        }
        if let Some(&c) = self.condition.iter().find(|&&c| c >= self.condition_names.len()) {
            return Err(Error::contract(format!("condition label {c} has no name")));
        }
        if let Some(&d) = self.domain.iter().find(|&&d| d >= self.domain_names.len()) {
            return Err(Error::contract(format!("domain label {d} has no name")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn condition_count(&self) -> usize {
        self.condition_names.len()
    }

    pub fn domain_count(&self) -> usize {
        self.domain_names.len()
    }

    /// Rows at `idx`, in that order; label vocabularies are kept.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            condition: idx.iter().map(|&i| self.condition[i]).collect(),
            domain: idx.iter().map(|&i| self.domain[i]).collect(),
            feature_names: self.feature_names.clone(),
            condition_names: self.condition_names.clone(),
            domain_names: self.domain_names.clone(),
        }
    }

    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep(self.domain[i], self.condition[i]))
            .collect();
        self.subset(&idx)
    }

    /// Rows of one (domain, condition) cell.
    pub fn cell(&self, domain: usize, condition: usize) -> Dataset {
        self.filter(|d, c| d == domain && c == condition)
    }

    pub fn with_x(&self, x: Tensor) -> Result<Dataset> {
        if x.shape() != self.x.shape() {
            return Err(Error::dim(format!(
                "replacement matrix {:?} does not match {:?}",
                x.shape(),
                self.x.shape()
            )));
        }
        Ok(Dataset { x, ..self.clone() })
    }
}

/// Which CSV columns carry labels; every other column is a numeric feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub condition_col: Option<String>,
    pub domain_col: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            condition_col: Some("condition".into()),
            domain_col: Some("domain".into()),
        }
    }
}

/// Label placeholder when a schema column is absent.
const UNLABELLED: &str = "all";

struct LabelIndex {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LabelIndex {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.lookup.get(s) {
            return i;
        }
        self.names.push(s.to_string());
        self.lookup.insert(s.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

/// Parses a header-first CSV. Labels are indexed by first appearance.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let find = |name: &Option<String>, what: &str| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => header
                .iter()
                .position(|h| h == n)
                .map(Some)
                .ok_or_else(|| Error::Schema(format!("{what} column `{n}` not in header"))),
        }
    };
    let cond_col = find(&schema.condition_col, "condition")?;
    let dom_col = find(&schema.domain_col, "domain")?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != cond_col && Some(i) != dom_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut conds = LabelIndex::new();
    let mut doms = LabelIndex::new();
    let mut values = Vec::new();
    let mut condition = Vec::new();
    let mut domain = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        for &c in &feature_cols {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                msg: format!("non-numeric value `{cell}` in column `{}`", header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
        condition.push(match cond_col {
            Some(c) => conds.intern(&rec[c]),
            None => conds.intern(UNLABELLED),
        });
        domain.push(match dom_col {
            Some(c) => doms.intern(&rec[c]),
            None => doms.intern(UNLABELLED),
        });
    }
    let n = condition.len();
    let x = Tensor::raw(vec![n, feature_cols.len()], values);
    Dataset::new(
        x,
        condition,
        domain,
        feature_cols.iter().map(|&c| header[c].clone()).collect(),
        conds.names,
        doms.names,
    )
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Parse {
            row: pos.as_ref().map_or(line, |p| p.line() as usize),
            col: *len as usize,
            msg: format!("row has {len} fields, header has {expected_len}"),
        },
        _ => Error::Parse {
            row: line,
            col: 0,
            msg: e.to_string(),
        },
    }
}

/// Writes features then the two label columns (by name).
pub fn write_csv(ds: &Dataset, path: &Path, schema: &CsvSchema) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(ds, std::io::BufWriter::new(file), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_csv_to<W: std::io::Write>(ds: &Dataset, writer: W, schema: &CsvSchema) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    if let Some(c) = &schema.condition_col {
        header.push(c);
    }
    if let Some(d) = &schema.domain_col {
        header.push(d);
    }
    w.write_record(&header).map_err(io)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        rec.clear();
        rec.extend(ds.x.row(i).iter().map(|v| format!("{v:?}")));
        if schema.condition_col.is_some() {
            rec.push(ds.condition_names[ds.condition[i]].clone());
        }
        if schema.domain_col.is_some() {
            rec.push(ds.domain_names[ds.domain[i]].clone());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Parameters of the synthetic shift benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub domain_count: usize,
    pub condition_count: usize,
    pub dims: usize,
    pub samples_per_cell: usize,
    pub domain_separation: f64,
    pub shift_magnitude: f64,
    pub response_sparsity: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            domain_count: 3,
            condition_count: 2,
            dims: 100,
            samples_per_cell: 500,
            domain_separation: 2.0,
            shift_magnitude: 2.0,
            response_sparsity: 0.3,
            noise_sd: 0.3,
            seed: 0,
        }
    }
}

/// Latent factors driving each domain's covariance.
const LATENT_FACTORS: usize = 4;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("domain_count", self.domain_count),
            ("condition_count", self.condition_count),
            ("dims", self.dims),
            ("samples_per_cell", self.samples_per_cell),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.response_sparsity > 0.0 && self.response_sparsity <= 1.0) {
            return Err(Error::config("response_sparsity", "must lie in (0, 1]"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::config("noise_sd", "must be positive"));
        }
        if !(self.domain_separation.is_finite() && self.domain_separation >= 0.0) {
            return Err(Error::config("domain_separation", "must be finite and >= 0"));
        }
        if !(self.shift_magnitude.is_finite() && self.shift_magnitude >= 0.0) {
            return Err(Error::config("shift_magnitude", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Exact population moments of one (domain, condition) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub domain: usize,
    pub condition: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Everything the generator fixed before sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cells: Vec<CellTruth>,
    /// Per condition (index 0 is the control and all zeros): additive response.
    pub shift: Vec<Vec<f64>>,
    /// Per condition: multiplicative response on the structured deviation.
    pub scale: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn cell(&self, domain: usize, condition: usize) -> Option<&CellTruth> {
        self.cells
            .iter()
            .find(|c| c.domain == domain && c.condition == condition)
    }
}

/// Generates the benchmark.
///
/// Domain `d` has a base mean `m_d` (entries `N(0, separation²)`) and a
/// loading matrix `L_d` (`p × 4`, entries `N(0, 1/4)`). A condition `c`
/// carries a response shared by all domains: a sparse shift `δ_c` (a
/// `response_sparsity` fraction of features, magnitude
/// `shift_magnitude · U(0.5, 1)`, random sign) and scales `λ_c ∈ [0.7, 1.3]`
/// on the same features. A sample of cell `(d, c)` is
///
/// ```text
/// x = m_d + δ_c + λ_c ⊙ (L_d u) + noise_sd · e,   u, e ~ N(0, I)
/// ```
///
/// Rows are ordered by domain, then condition, then sample.
pub fn synth_shift(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let p = spec.dims;
    let k = LATENT_FACTORS;
    let mut root = SplitMix64::new(spec.seed);
    let mut structure = root.fork(1);
    let mut response = root.fork(2);
    let mut sampling = root.fork(3);

    let mut means = Vec::with_capacity(spec.domain_count);
    let mut loadings = Vec::with_capacity(spec.domain_count);
    for _ in 0..spec.domain_count {
        means.push((0..p).map(|_| spec.domain_separation * structure.normal()).collect::<Vec<_>>());
        loadings.push((0..p * k).map(|_| 0.5 * structure.normal()).collect::<Vec<_>>());
    }

    let responsive = ((spec.response_sparsity * p as f64).round() as usize).clamp(1, p);
    let mut shift = vec![vec![0.0; p]];
    let mut scale = vec![vec![1.0; p]];
    for _ in 1..spec.condition_count {
        let mut feats: Vec<usize> = (0..p).collect();
        response.shuffle(&mut feats);
        let mut dlt = vec![0.0; p];
        let mut lam = vec![1.0; p];
        for &j in &feats[..responsive] {
            let sign = if response.uniform() < 0.5 { -1.0 } else { 1.0 };
            dlt[j] = sign * spec.shift_magnitude * response.uniform_range(0.5, 1.0);
            lam[j] = response.uniform_range(0.7, 1.3);
        }
        shift.push(dlt);
        scale.push(lam);
    }

    let n = spec.domain_count * spec.condition_count * spec.samples_per_cell;
    let mut values = Vec::with_capacity(n * p);
    let mut condition = Vec::with_capacity(n);
    let mut domain = Vec::with_capacity(n);
    let mut cells = Vec::new();
    let noise_var = spec.noise_sd * spec.noise_sd;
    let mut u = vec![0.0; k];
    for d in 0..spec.domain_count {
        let l = &loadings[d];
        for c in 0..spec.condition_count {
            let mean: Vec<f64> = (0..p).map(|j| means[d][j] + shift[c][j]).collect();
            let variance: Vec<f64> = (0..p)
                .map(|j| {
                    let ll: f64 = l[j * k..(j + 1) * k].iter().map(|v| v * v).sum();
                    scale[c][j] * scale[c][j] * ll + noise_var
                })
                .collect();
            for _ in 0..spec.samples_per_cell {
                for v in u.iter_mut() {
                    *v = sampling.normal();
                }
                for j in 0..p {
                    let lu: f64 = l[j * k..(j + 1) * k].iter().zip(&u).map(|(a, b)| a * b).sum();
                    values.push(mean[j] + scale[c][j] * lu + spec.noise_sd * sampling.normal());
                }
                condition.push(c);
                domain.push(d);
            }
            cells.push(CellTruth {
                domain: d,
                condition: c,
                mean,
                variance,
            });
        }
    }

    let ds = Dataset::new(
        Tensor::raw(vec![n, p], values),
        condition,
        domain,
        (0..p).map(|j| format!("feature_{j:03}")).collect(),
        (0..spec.condition_count)
            .map(|c| if c == 0 { "control".to_string() } else { format!("perturbed_{c}") })
            .collect(),
        (0..spec.domain_count).map(|d| format!("domain_{d}")).collect(),
    )?;
    Ok((ds, GroundTruth { cells, shift, scale }))
}

/// A (domain, condition) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub domain: usize,
    pub condition: usize,
}

/// Cells withheld from training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldoutPlan {
    pub held_out: Vec<Cell>,
}

impl HoldoutPlan {
    pub fn new(cells: &[(usize, usize)]) -> Self {
        Self {
            held_out: cells
                .iter()
                .map(|&(domain, condition)| Cell { domain, condition })
                .collect(),
        }
    }

    pub fn contains(&self, domain: usize, condition: usize) -> bool {
        self.held_out
            .iter()
            .any(|c| c.domain == domain && c.condition == condition)
    }

    /// Labels in range, and condition 0 (the control) never held out, so
    /// every held-out domain keeps a transformation source.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        for c in &self.held_out {
            if c.domain >= ds.domain_count() || c.condition >= ds.condition_count() {
                return Err(Error::config(
                    "held_out",
                    format!(
                        "cell (domain {}, condition {}) outside {} domains x {} conditions",
                        c.domain,
                        c.condition,
                        ds.domain_count(),
                        ds.condition_count()
                    ),
                ));
            }
            if c.condition == 0 {
                return Err(Error::config(
                    "held_out",
                    format!("domain {} would lose its control cell", c.domain),
                ));
            }
        }
        Ok(())
    }
}

/// Partitions rows into (train, heldout), order-stable.
pub fn split_holdout(ds: &Dataset, plan: &HoldoutPlan) -> Result<(Dataset, Dataset)> {
    plan.validate(ds)?;
    let (mut tr, mut ho) = (Vec::new(), Vec::new());
    for i in 0..ds.len() {
        if plan.contains(ds.domain[i], ds.condition[i]) {
            ho.push(i);
        } else {
            tr.push(i);
        }
    }
    if tr.is_empty() {
        return Err(Error::contract("holdout plan leaves no training rows"));
    }
    Ok((ds.subset(&tr), ds.subset(&ho)))
}

/// Per-feature affine standardization, fit on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; zero-spread columns get sd 1.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, p) = x.expect_matrix("standardizer")?;
        if n == 0 {
            return Err(Error::contract("cannot standardize an empty matrix"));
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
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            sd: vec![1.0; p],
        }
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let p = x.cols();
        if p != self.mean.len() {
            return Err(Error::dim(format!(
                "standardizer fit on {} features, input has {p}",
                self.mean.len()
            )));
        }
        Ok(p)
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.check(x)?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % p]) / self.sd[i % p])
            .collect();
        Ok(Tensor::raw(x.shape().to_vec(), data))
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.check(x)?;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.sd[i % p] + self.mean[i % p])
            .collect();
        Ok(Tensor::raw(x.shape().to_vec(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "g1,g2,condition,domain\n1.5,2,ctrl,a\n-3,4e-1,stim,b\n0,7,ctrl,a\n";

    #[test]
    fn parses_small_file() {
        let ds = read_csv(SMALL.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.x.shape(), &[3, 2]);
        assert_eq!(ds.condition, vec![0, 1, 0]);
        assert_eq!(ds.condition_names, vec!["ctrl", "stim"]);
        assert_eq!(ds.domain, vec![0, 1, 0]);
        assert_eq!(ds.feature_names, vec!["g1", "g2"]);
        assert_eq!(ds.x.data(), &[1.5, 2.0, -3.0, 0.4, 0.0, 7.0]);
    }

    #[test]
    fn label_columns_anywhere() {
        let text = "condition,g1,domain,g2\nb,1,x,2\na,3,y,4\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.feature_names, vec!["g1", "g2"]);
        assert_eq!(ds.x.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.condition_names, vec!["b", "a"]);
    }

    #[test]
    fn missing_column() {
        let schema = CsvSchema {
            condition_col: Some("treatment".into()),
            ..CsvSchema::default()
        };
        assert!(matches!(read_csv(SMALL.as_bytes(), &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let text = "g1,g2,condition,domain\n1,2,a,b\n3,oops,a,b\n";
        match read_csv(text.as_bytes(), &CsvSchema::default()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_rejected() {
        let text = "g1,condition,domain\nNaN,a,b\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn ragged_row() {
        let text = "g1,g2,condition,domain\n1,2,a,b\n3,a,b\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default()),
            Err(Error::Parse { row: 3, .. })
        ));
    }

    #[test]
    fn optional_label_columns() {
        let text = "g1,g2\n1,2\n3,4\n";
        let schema = CsvSchema {
            condition_col: None,
            domain_col: None,
        };
        let ds = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(ds.condition, vec![0, 0]);
        assert_eq!(ds.condition_names, vec![UNLABELLED]);
    }

    #[test]
    fn csv_round_trip() {
        let schema = CsvSchema::default();
        let (ds, _) = synth_shift(&SyntheticSpec {
            samples_per_cell: 4,
            dims: 6,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf, &schema).unwrap();
        let back = read_csv(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, ds);
        let mut buf2 = Vec::new();
        write_csv_to(&back, &mut buf2, &schema).unwrap();
        assert_eq!(buf, buf2);
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples_per_cell: 2000,
            dims: 20,
            ..SyntheticSpec::default()
        }
    }

    fn column_means(ds: &Dataset) -> Vec<f64> {
        let mut m = vec![0.0; ds.dim()];
        for i in 0..ds.len() {
            for (a, v) in m.iter_mut().zip(ds.x.row(i)) {
                *a += v;
            }
        }
        m.iter().map(|v| v / ds.len() as f64).collect()
    }

    #[test]
    fn synthetic_counts_and_labels() {
        let spec = SyntheticSpec {
            samples_per_cell: 7,
            ..SyntheticSpec::default()
        };
        let (ds, gt) = synth_shift(&spec).unwrap();
        assert_eq!(ds.len(), 3 * 2 * 7);
        assert_eq!(ds.dim(), 100);
        assert_eq!(gt.cells.len(), 6);
        assert_eq!(ds.cell(2, 1).len(), 7);
    }

    #[test]
    fn synthetic_means_match_truth() {
        let spec = small_spec();
        let (ds, gt) = synth_shift(&spec).unwrap();
        for d in 0..spec.domain_count {
            let cell = ds.cell(d, 1);
            let truth = gt.cell(d, 1).unwrap();
            let n = cell.len() as f64;
            for (j, m) in column_means(&cell).iter().enumerate() {
                let tol = 4.0 * truth.variance[j].sqrt() / n.sqrt();
                assert!((m - truth.mean[j]).abs() < tol, "d={d} j={j}: {m} vs {}", truth.mean[j]);
            }
        }
    }

    #[test]
    fn zero_shift_gives_matching_means() {
        let spec = SyntheticSpec {
            shift_magnitude: 0.0,
            ..small_spec()
        };
        let (ds, gt) = synth_shift(&spec).unwrap();
        let a = column_means(&ds.cell(1, 0));
        let b = column_means(&ds.cell(1, 1));
        let n = spec.samples_per_cell as f64;
        for j in 0..spec.dims {
            let sd = gt.cell(1, 1).unwrap().variance[j].sqrt().max(gt.cell(1, 0).unwrap().variance[j].sqrt());
            // Difference of two independent means: sd·√2/√n.
            assert!((a[j] - b[j]).abs() < 4.0 * sd * 2f64.sqrt() / n.sqrt(), "j={j}");
        }
    }

    #[test]
    fn response_shared_across_domains() {
        let (_, gt) = synth_shift(&small_spec()).unwrap();
        let (_, gt2) = synth_shift(&small_spec()).unwrap();
        assert_eq!(gt, gt2);
        for d in 1..3 {
            let delta0: Vec<f64> = (0..20)
                .map(|j| gt.cell(0, 1).unwrap().mean[j] - gt.cell(0, 0).unwrap().mean[j])
                .collect();
            let delta: Vec<f64> = (0..20)
                .map(|j| gt.cell(d, 1).unwrap().mean[j] - gt.cell(d, 0).unwrap().mean[j])
                .collect();
            for (a, b) in delta0.iter().zip(&delta) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            samples_per_cell: 10,
            ..SyntheticSpec::default()
        };
        let (a, _) = synth_shift(&spec).unwrap();
        let (b, _) = synth_shift(&spec).unwrap();
        assert_eq!(a.x.data(), b.x.data());
    }

    #[test]
    fn synthetic_spec_rejects_bad_values() {
        assert!(SyntheticSpec { noise_sd: 0.0, ..SyntheticSpec::default() }.validate().is_err());
        assert!(SyntheticSpec { response_sparsity: 0.0, ..SyntheticSpec::default() }.validate().is_err());
        assert!(SyntheticSpec { dims: 0, ..SyntheticSpec::default() }.validate().is_err());
        let json = r#"{"domain_count":1,"condition_count":2,"dims":3,"samples_per_cell":4,
            "domain_separation":1,"shift_magnitude":1,"response_sparsity":0.5,"noise_sd":1,"seed":0,"extra":1}"#;
        assert!(serde_json::from_str::<SyntheticSpec>(json).is_err());
    }

    #[test]
    fn holdout_basics() {
        let (ds, _) = synth_shift(&SyntheticSpec {
            samples_per_cell: 5,
            dims: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let (tr, ho) = split_holdout(&ds, &HoldoutPlan::default()).unwrap();
        assert_eq!(tr, ds);
        assert!(ho.is_empty());

        let (tr, ho) = split_holdout(&ds, &HoldoutPlan::new(&[(2, 1)])).unwrap();
        assert_eq!(tr.len() + ho.len(), ds.len());
        assert!((0..tr.len()).all(|i| !(tr.domain[i] == 2 && tr.condition[i] == 1)));
        assert!((0..ho.len()).all(|i| ho.domain[i] == 2 && ho.condition[i] == 1));
        assert_eq!(ho.len(), 5);
    }

    #[test]
    fn holdout_rejects_control_and_out_of_range() {
        let (ds, _) = synth_shift(&SyntheticSpec {
            samples_per_cell: 2,
            dims: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert!(split_holdout(&ds, &HoldoutPlan::new(&[(0, 0)])).is_err());
        assert!(split_holdout(&ds, &HoldoutPlan::new(&[(5, 1)])).is_err());
    }

    #[test]
    fn holdout_that_empties_training() {
        let text = "g1,condition,domain\n1,ctrl,a\n2,stim,a\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        let only_stim = ds.cell(0, 1);
        // Vocabulary keeps both conditions; the single remaining row is held out.
        assert!(matches!(
            split_holdout(&only_stim, &HoldoutPlan::new(&[(0, 1)])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn standardizer_round_trip() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let st = Standardizer::fit(&x).unwrap();
        assert_eq!(st.mean, vec![3.0, 5.0]);
        assert_eq!(st.sd[1], 1.0);
        let z = st.transform(&x).unwrap();
        let back = st.inverse(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
