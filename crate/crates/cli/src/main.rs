use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trvae::data::{load_csv, synth_shift, write_csv, CsvSchema, Dataset, SyntheticSpec};
use trvae::eval::{evaluate_transform, export_embeddings, score_prediction, Layer};
use trvae::run::{
    full_loss_gradcheck, load_data, read_json, run_training, summarize_trace, write_json, write_outputs, Checkpoint,
    GradcheckSize, RunConfig, GRADCHECK_TOLERANCE,
};
use trvae::tensor::OpKind;
use trvae::{Error, Result};

#[derive(Parser)]
#[command(name = "trvae", version, about = "Conditional VAE with MMD regularization for out-of-sample transformation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic domain/condition dataset and its ground truth.
    Synth {
        /// Synthetic spec JSON.
        spec: PathBuf,
        /// Output CSV.
        out: PathBuf,
        /// Ground-truth JSON (default: <out>.truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train from a run config; writes checkpoint, loss trace and manifest.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Transform samples from one condition to another.
    Predict {
        checkpoint: PathBuf,
        input: PathBuf,
        out: PathBuf,
        #[arg(long)]
        source_condition: String,
        #[arg(long)]
        target_condition: String,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Score a transformation against held-out truth.
    Eval {
        checkpoint: PathBuf,
        /// Source samples, or predictions with --predicted.
        heldout: PathBuf,
        truth: PathBuf,
        /// Report JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Treat the first file as an already-transformed prediction.
        #[arg(long)]
        predicted: bool,
        #[arg(long)]
        source_condition: Option<String>,
        #[arg(long)]
        target_condition: Option<String>,
        /// Also export embeddings of both inputs at this layer.
        #[arg(long, value_name = "z|y1")]
        embed: Option<Layer>,
        #[arg(long, default_value = ".")]
        embed_dir: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Check the full-loss gradient against central differences.
    Gradcheck {
        #[arg(long, default_value = "toy", value_name = "small|toy")]
        size: GradcheckSize,
        #[arg(long, hide = true)]
        corrupt_backward: Option<String>,
    },
    /// Export per-sample embeddings.
    Embed {
        checkpoint: PathBuf,
        input: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "y1", value_name = "z|y1")]
        layer: Layer,
        #[command(flatten)]
        schema: SchemaArgs,
    },
}

#[derive(Args)]
struct SchemaArgs {
    #[arg(long, default_value = "condition")]
    condition_col: String,
    #[arg(long, default_value = "domain")]
    domain_col: String,
}

impl SchemaArgs {
    fn required(&self) -> CsvSchema {
        CsvSchema {
            condition_col: Some(self.condition_col.clone()),
            domain_col: Some(self.domain_col.clone()),
        }
    }

    /// Drops label columns the file does not have.
    fn present_in(&self, path: &Path) -> Result<CsvSchema> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let header = rdr.headers().map_err(|e| Error::Parse {
            row: 1,
            col: 1,
            msg: e.to_string(),
        })?;
        let has = |name: &str| header.iter().any(|h| h == name);
        Ok(CsvSchema {
            condition_col: has(&self.condition_col).then(|| self.condition_col.clone()),
            domain_col: has(&self.domain_col).then(|| self.domain_col.clone()),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Synth { spec, out, truth } => cmd_synth(&spec, &out, truth),
        Command::Train {
            config,
            seed,
            output_dir,
        } => cmd_train(&config, seed, output_dir),
        Command::Predict {
            checkpoint,
            input,
            out,
            source_condition,
            target_condition,
            schema,
        } => cmd_predict(&checkpoint, &input, &out, &source_condition, &target_condition, &schema),
        Command::Eval {
            checkpoint,
            heldout,
            truth,
            out,
            predicted,
            source_condition,
            target_condition,
            embed,
            embed_dir,
            schema,
        } => {
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let schema = schema.required();
            let source = checkpoint.align_conditions(&load_csv(&heldout, &schema)?)?;
            let truth = checkpoint.align_conditions(&load_csv(&truth, &schema)?)?;
            let model = checkpoint.to_model()?;
            let report = if predicted {
                score_prediction(&source.x, &truth.x)?
            } else {
                let s_src = resolve_condition(&checkpoint, source_condition.as_deref(), &source, "source")?;
                let s_tgt = resolve_condition(&checkpoint, target_condition.as_deref(), &truth, "target")?;
                evaluate_transform(&model, &source, &truth, s_src, s_tgt)?
            };
            match out {
                Some(path) => write_json(&report, &path)?,
                None => println!("{}", serde_json_string(&report)),
            }
            eprintln!("r_mean {:.6}  r_var {:.6}", report.r_mean, report.r_var);
            if let Some(layer) = embed {
                std::fs::create_dir_all(&embed_dir).map_err(|e| Error::io(&embed_dir, e))?;
                export_embeddings(&model, &source, layer, &embed_dir.join(format!("source_{layer}.csv")))?;
                export_embeddings(&model, &truth, layer, &embed_dir.join(format!("truth_{layer}.csv")))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            size,
            corrupt_backward,
        } => {
            let fault = corrupt_backward.map(|s| parse_op(&s)).transpose()?;
            let report = full_loss_gradcheck(size, fault)?;
            let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
            println!(
                "{} max_rel_error {:e} over {} coordinates (worst: tensor {}, index {}; analytic {:e}, numeric {:e})",
                if pass { "PASS" } else { "FAIL" },
                report.max_rel_error,
                report.coordinates,
                report.worst.0,
                report.worst.1,
                report.analytic,
                report.numeric
            );
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Embed {
            checkpoint,
            input,
            out,
            layer,
            schema,
        } => {
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let ds = checkpoint.align_conditions(&load_csv(&input, &schema.required())?)?;
            export_embeddings(&checkpoint.to_model()?, &ds, layer, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn cmd_synth(spec_path: &Path, out: &Path, truth: Option<PathBuf>) -> Result<ExitCode> {
    let spec: SyntheticSpec = read_json(spec_path)?;
    if spec.condition_count < 2 {
        return Err(Error::config(
            "condition_count",
            "at least 2 conditions are needed (nothing to transform)",
        ));
    }
    let (ds, gt) = synth_shift(&spec)?;
    write_csv(&ds, out, &CsvSchema::default())?;
    let truth = truth.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".truth.json");
        PathBuf::from(p)
    });
    write_json(&gt, &truth)?;
    eprintln!("wrote {} rows to {}", ds.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg: RunConfig = read_json(path)?;
    cfg.apply_env()?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    let data = load_data(&cfg.data)?;
    let outcome = run_training(&cfg, &data)?;
    let manifest = write_outputs(&cfg, &outcome)?;
    eprint!("{}", summarize_trace(&outcome.trace));
    eprintln!(
        "wrote {} to {} (config {})",
        manifest.files.join(", "),
        cfg.output_dir.display(),
        &manifest.config_hash[..12]
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    source: &str,
    target: &str,
    schema: &SchemaArgs,
) -> Result<ExitCode> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    let s_src = checkpoint.condition_index(source)?;
    let s_tgt = checkpoint.condition_index(target)?;
    let schema = schema.present_in(input)?;
    let ds = load_csv(input, &schema)?;
    let model = checkpoint.to_model()?;
    let pred = model.predict(&ds.x, s_src, s_tgt)?;
    let target_name = checkpoint
        .condition_names
        .get(s_tgt)
        .cloned()
        .unwrap_or_else(|| s_tgt.to_string());
    let result = Dataset::new(
        pred,
        vec![0; ds.len()],
        ds.domain.clone(),
        checkpoint.feature_names.clone(),
        vec![target_name],
        ds.domain_names.clone(),
    )?;
    let out_schema = CsvSchema {
        condition_col: Some(schema.condition_col.unwrap_or_else(|| "condition".into())),
        domain_col: schema.domain_col,
    };
    write_csv(&result, out, &out_schema)?;
    Ok(ExitCode::SUCCESS)
}

/// Explicit label, else the single condition present in `ds`.
fn resolve_condition(checkpoint: &Checkpoint, label: Option<&str>, ds: &Dataset, what: &str) -> Result<usize> {
    if let Some(l) = label {
        return checkpoint.condition_index(l);
    }
    let first = *ds
        .condition
        .first()
        .ok_or_else(|| Error::contract(format!("{what} data has no rows")))?;
    if ds.condition.iter().any(|&c| c != first) {
        return Err(Error::contract(format!(
            "{what} data mixes conditions; pass --{what}-condition"
        )));
    }
    Ok(first)
}

fn parse_op(s: &str) -> Result<OpKind> {
    OpKind::ALL
        .iter()
        .copied()
        .find(|k| format!("{k:?}").eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::config("corrupt_backward", format!("unknown op `{s}`")))
}
