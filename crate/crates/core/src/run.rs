//! End-to-end runs: JSON configuration, checkpoints, manifests and the
//! pipelines behind the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, split_holdout, synth_shift, write_csv, CsvSchema, Dataset, GroundTruth, HoldoutPlan, Standardizer,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{compactness_report, CompactnessReport};
use crate::model::{build_loss, ModelConfig, ModelParams, TrainedModel};
use crate::rng::SplitMix64;
use crate::tensor::{grad_check, GradCheck, OpKind, Tensor};
use crate::train::{init_params, train, LossTrace, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Environment variable that overrides the training seed.
pub const SEED_ENV: &str = "TRVAE_SEED";

/// Parses JSON into `T`, reporting the key path of the first problem.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::config("<serialize>", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_condition_col")]
    pub condition_col: String,
    #[serde(default = "default_domain_col")]
    pub domain_col: String,
}

fn default_condition_col() -> String {
    "condition".into()
}

fn default_domain_col() -> String {
    "domain".into()
}

impl CsvSource {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            condition_col: Some(self.condition_col.clone()),
            domain_col: Some(self.domain_col.clone()),
        }
    }
}

/// Exactly one data source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv(CsvSource),
    Synthetic(SyntheticSpec),
}

/// Model section of a run config: `input_dim` and `condition_count` may be
/// left at 0 and are then taken from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default)]
    pub holdout: HoldoutPlan,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// [`ModelConfig`] with the data-derived sizes optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub condition_count: usize,
    #[serde(default = "defaults_encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "defaults_z_dim")]
    pub z_dim: usize,
    #[serde(default = "defaults_g1_dim")]
    pub g1_dim: usize,
    #[serde(default = "defaults_g2_hidden")]
    pub g2_hidden: Vec<usize>,
    #[serde(default = "defaults_slope")]
    pub activation_slope: f64,
    #[serde(default = "defaults_alpha")]
    pub alpha: f64,
    #[serde(default = "defaults_eta")]
    pub eta: f64,
    #[serde(default = "defaults_beta")]
    pub beta: f64,
    #[serde(default = "defaults_mmd_layer")]
    pub mmd_layer: crate::model::MmdLayer,
    #[serde(default)]
    pub kernel: crate::mmd::KernelSpec,
}

macro_rules! section_default {
    ($name:ident, $field:ident, $ty:ty) => {
        fn $name() -> $ty {
            ModelConfig::new(1, 2).$field
        }
    };
}
section_default!(defaults_encoder_hidden, encoder_hidden, Vec<usize>);
section_default!(defaults_z_dim, z_dim, usize);
section_default!(defaults_g1_dim, g1_dim, usize);
section_default!(defaults_g2_hidden, g2_hidden, Vec<usize>);
section_default!(defaults_slope, activation_slope, f64);
section_default!(defaults_alpha, alpha, f64);
section_default!(defaults_eta, eta, f64);
section_default!(defaults_beta, beta, f64);
section_default!(defaults_mmd_layer, mmd_layer, crate::model::MmdLayer);

impl Default for ModelSection {
    fn default() -> Self {
        Self::from(ModelConfig::new(0, 0))
    }
}

impl From<ModelConfig> for ModelSection {
    fn from(c: ModelConfig) -> Self {
        Self {
            input_dim: c.input_dim,
            condition_count: c.condition_count,
            encoder_hidden: c.encoder_hidden,
            z_dim: c.z_dim,
            g1_dim: c.g1_dim,
            g2_hidden: c.g2_hidden,
            activation_slope: c.activation_slope,
            alpha: c.alpha,
            eta: c.eta,
            beta: c.beta,
            mmd_layer: c.mmd_layer,
            kernel: c.kernel,
        }
    }
}

impl ModelSection {
    /// Fills in data-derived sizes; explicit values must agree with the data.
    pub fn resolve(&self, input_dim: usize, condition_count: usize) -> Result<ModelConfig> {
        if self.input_dim != 0 && self.input_dim != input_dim {
            return Err(Error::config(
                "model.input_dim",
                format!("config says {}, data has {input_dim} features", self.input_dim),
            ));
        }
        if self.condition_count != 0 && self.condition_count < condition_count {
            return Err(Error::config(
                "model.condition_count",
                format!("config says {}, data has {condition_count} conditions", self.condition_count),
            ));
        }
        let cfg = ModelConfig {
            input_dim,
            condition_count: if self.condition_count == 0 { condition_count } else { self.condition_count },
            encoder_hidden: self.encoder_hidden.clone(),
            z_dim: self.z_dim,
            g1_dim: self.g1_dim,
            g2_hidden: self.g2_hidden.clone(),
            activation_slope: self.activation_slope,
            alpha: self.alpha,
            eta: self.eta,
            beta: self.beta,
            mmd_layer: self.mmd_layer,
            kernel: self.kernel.clone(),
        };
        cfg.validate().map_err(|e| under("model", e))?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn new(model: ModelSection, train: TrainConfig, data: DataSource) -> Self {
        Self {
            model,
            train,
            data,
            holdout: HoldoutPlan::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Versioned parameter snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub scaler: Standardizer,
    pub feature_names: Vec<String>,
    pub condition_names: Vec<String>,
    pub tensors: Vec<StoredTensor>,
    pub seed: u64,
    pub final_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: &TrainedModel,
        feature_names: Vec<String>,
        condition_names: Vec<String>,
        seed: u64,
        final_epoch: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            scaler: model.scaler.clone(),
            feature_names,
            condition_names,
            tensors: model
                .params
                .tensors()
                .into_iter()
                .map(|t| StoredTensor {
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
            seed,
            final_epoch,
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::config(
                "format_version",
                format!("unsupported checkpoint version {}", self.format_version),
            ));
        }
        self.model.validate()?;
        let tensors = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Tensor::new(t.shape.clone(), t.values.clone())
                    .map_err(|e| Error::config(format!("tensors[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = self.model.input_dim;
        if self.scaler.mean.len() != p || self.scaler.sd.len() != p || self.feature_names.len() != p {
            return Err(Error::config("scaler", format!("expected {p} features")));
        }
        if self.condition_names.len() > self.model.condition_count {
            return Err(Error::config("condition_names", "more names than model conditions"));
        }
        Ok(TrainedModel {
            params: ModelParams::from_tensors(&self.model, tensors)?,
            config: self.model.clone(),
            scaler: self.scaler.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Index of a condition given by name, or by number when no name matches.
    pub fn condition_index(&self, label: &str) -> Result<usize> {
        if let Some(i) = self.condition_names.iter().position(|n| n == label) {
            return Ok(i);
        }
        match label.parse::<usize>() {
            Ok(i) if i < self.model.condition_count => Ok(i),
            _ => Err(Error::contract(format!(
                "unknown condition `{label}` (model knows {:?})",
                self.condition_names
            ))),
        }
    }

    /// Re-indexes a dataset's condition labels into the checkpoint vocabulary.
    pub fn align_conditions(&self, ds: &Dataset) -> Result<Dataset> {
        let map = ds
            .condition_names
            .iter()
            .map(|n| self.condition_names.iter().position(|m| m == n))
            .collect::<Vec<_>>();
        let mut out = ds.clone();
        for (i, c) in out.condition.iter_mut().enumerate() {
            *c = map[*c].ok_or_else(|| {
                Error::contract(format!(
                    "row {i}: condition `{}` unknown to the model",
                    ds.condition_names[ds.condition[i]]
                ))
            })?;
        }
        out.condition_names = self.condition_names.clone();
        Ok(out)
    }
}

/// Loaded or generated data of a run, before splitting.
#[derive(Clone, Debug)]
pub struct RunData {
    pub full: Dataset,
    pub truth: Option<GroundTruth>,
}

pub fn load_data(source: &DataSource) -> Result<RunData> {
    match source {
        DataSource::Csv(c) => Ok(RunData {
            full: load_csv(&c.path, &c.schema())?,
            truth: None,
        }),
        DataSource::Synthetic(spec) => {
            let (full, truth) = synth_shift(spec)?;
            Ok(RunData {
                full,
                truth: Some(truth),
            })
        }
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub trace: LossTrace,
    pub train_set: Dataset,
    pub heldout: Dataset,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    /// Control rows of each held-out cell's domain, paired with the held-out rows
    /// of `condition`. Returns `None` when nothing of that condition is held out.
    pub fn eval_pair(&self, condition: usize) -> Option<(Dataset, Dataset)> {
        let truth = self.heldout.filter(|_, c| c == condition);
        if truth.is_empty() {
            return None;
        }
        let doms: Vec<usize> = truth.domain.clone();
        let source = self.train_set.filter(|d, c| c == 0 && doms.contains(&d));
        Some((source, truth))
    }
}

/// Prefixes the key path of a config error.
fn under(section: &str, e: Error) -> Error {
    match e {
        Error::Config { path, msg } => Error::config(format!("{section}.{path}"), msg),
        other => other,
    }
}

/// Data → split → standardize → train.
pub fn run_training(cfg: &RunConfig, data: &RunData) -> Result<TrainOutcome> {
    cfg.train.validate().map_err(|e| under("train", e))?;
    cfg.holdout.validate(&data.full).map_err(|e| under("holdout", e))?;
    let (train_raw, heldout) = split_holdout(&data.full, &cfg.holdout)?;
    let model_cfg = cfg.model.resolve(train_raw.dim(), data.full.condition_count())?;
    let scaler = Standardizer::fit(&train_raw.x)?;
    let train_std = train_raw.with_x(scaler.transform(&train_raw.x)?)?;
    let (params, trace) = train(&train_std, &model_cfg, &cfg.train)?;
    let model = TrainedModel {
        config: model_cfg,
        params,
        scaler,
    };
    let checkpoint = Checkpoint::new(
        &model,
        data.full.feature_names.clone(),
        data.full.condition_names.clone(),
        cfg.train.seed,
        trace.epochs(),
    );
    Ok(TrainOutcome {
        model,
        trace,
        train_set: train_raw,
        heldout,
        checkpoint,
    })
}

/// Cross-condition MMD of the initialization and of the trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessComparison {
    pub before: CompactnessReport,
    pub after: CompactnessReport,
}

pub fn compare_compactness(outcome: &TrainOutcome, seed: u64) -> Result<CompactnessComparison> {
    let init = TrainedModel {
        params: init_params(&outcome.model.config, seed),
        ..outcome.model.clone()
    };
    Ok(CompactnessComparison {
        before: compactness_report(&init, &outcome.train_set)?,
        after: compactness_report(&outcome.model, &outcome.train_set)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_version: u32,
    pub epochs_run: usize,
    pub steps: usize,
    pub train_rows: usize,
    pub heldout_rows: usize,
    pub files: Vec<String>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SOURCE_FILE: &str = "eval_source.csv";
pub const HELDOUT_FILE: &str = "eval_truth.csv";

/// Writes checkpoint, loss trace, manifest and (with a holdout) the
/// evaluation source/truth CSVs into `cfg.output_dir`.
pub fn write_outputs(cfg: &RunConfig, outcome: &TrainOutcome) -> Result<Manifest> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![CHECKPOINT_FILE.to_string(), TRACE_FILE.to_string()];
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let trace_path = dir.join(TRACE_FILE);
    let f = std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    outcome
        .trace
        .write_csv(std::io::BufWriter::new(f))
        .map_err(|e| Error::io(&trace_path, e))?;

    if !outcome.heldout.is_empty() {
        let schema = match &cfg.data {
            DataSource::Csv(c) => c.schema(),
            DataSource::Synthetic(_) => CsvSchema::default(),
        };
        let doms: Vec<usize> = outcome.heldout.domain.clone();
        let source = outcome.train_set.filter(|d, c| c == 0 && doms.contains(&d));
        write_csv(&source, &dir.join(SOURCE_FILE), &schema)?;
        write_csv(&outcome.heldout, &dir.join(HELDOUT_FILE), &schema)?;
        files.push(SOURCE_FILE.into());
        files.push(HELDOUT_FILE.into());
    }
    files.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_version: CHECKPOINT_VERSION,
        epochs_run: outcome.trace.epochs(),
        steps: outcome.trace.records.len(),
        train_rows: outcome.train_set.len(),
        heldout_rows: outcome.heldout.len(),
        files,
    };
    write_json(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Human-readable one-line summary of an epoch table.
pub fn summarize_trace(trace: &LossTrace) -> String {
    let mut s = String::new();
    for e in trace.epoch_means() {
        let _ = writeln!(
            s,
            "epoch {:>3}  total {:.5}  recon {:.5}  kl {:.5}  mmd {:.5}",
            e.epoch, e.total, e.recon, e.kl, e.mmd
        );
    }
    s
}

/// Network sizes for the full-loss gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradcheckSize {
    /// p=6, z=2, g1=4, batch 6.
    Small,
    /// p=20, z=4, g1=8, batch 8.
    Toy,
}

impl std::str::FromStr for GradcheckSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "toy" => Ok(Self::Toy),
            other => Err(Error::config("size", format!("expected small or toy, got `{other}`"))),
        }
    }
}

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference check of the full two-condition loss with unit weights
/// (α = η = β = 1) and MMD at layer y1. `fault` scales one op's backward rule (negative control).
pub fn full_loss_gradcheck(size: GradcheckSize, fault: Option<OpKind>) -> Result<GradCheck> {
    let (p, z, g1, batch, hidden) = match size {
        GradcheckSize::Small => (6, 2, 4, 6, 8),
        GradcheckSize::Toy => (20, 4, 8, 8, 16),
    };
    let config = ModelConfig {
        encoder_hidden: vec![hidden],
        z_dim: z,
        g1_dim: g1,
        g2_hidden: vec![hidden],
        alpha: 1.0,
        eta: 1.0,
        beta: 1.0,
        mmd_layer: crate::model::MmdLayer::Y1,
        ..ModelConfig::new(p, 2)
    };
    let (ds, _) = synth_shift(&SyntheticSpec {
        domain_count: 1,
        condition_count: 2,
        dims: p,
        samples_per_cell: batch / 2,
        seed: 7,
        ..SyntheticSpec::default()
    })?;
    let x = Standardizer::fit(&ds.x)?.transform(&ds.x)?;
    let mut rng = SplitMix64::new(11);
    let params = ModelParams::init(&config, &mut rng.fork(1));
    let mut noise = rng.fork(2);
    let eps = Tensor::new(vec![batch, z], (0..batch * z).map(|_| noise.normal()).collect())?;
    let point: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    grad_check(
        |g, ids| {
            if let Some(kind) = fault {
                g.inject_backward_fault(kind);
            }
            let nodes = params.bind(ids.to_vec());
            Ok(build_loss(g, &nodes, &config, &x, &ds.condition, &eps)?.total)
        },
        &point,
        GRADCHECK_STEP,
    )
}
