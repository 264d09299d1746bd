//! Synthetic shift benchmark: trains the MMD-regularized model and its
//! ablations over several seeds and prints transformation scores.
//!
//! Usage: `cargo run --release --example benchmark -- [key=value ...]`
//! Keys: seeds, epochs, batch, lr, alpha, beta, conditions, layers (comma list of y1,z,none).

use std::collections::BTreeMap;
use std::time::Instant;

use trvae::data::{HoldoutPlan, SyntheticSpec};
use trvae::eval::{evaluate_transform, Layer};
use trvae::model::{MmdLayer, ModelConfig};
use trvae::run::{compare_compactness, load_data, run_training, DataSource, ModelSection, RunConfig};
use trvae::train::TrainConfig;

fn main() -> trvae::Result<()> {
    let args: BTreeMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str| args.get(k).cloned();
    let seeds: u64 = get("seeds").map_or(5, |v| v.parse().unwrap());
    let conditions: usize = get("conditions").map_or(2, |v| v.parse().unwrap());
    let layers: Vec<String> = get("layers")
        .unwrap_or_else(|| "y1,none,z".into())
        .split(',')
        .map(String::from)
        .collect();

    let mut base = ModelSection::from(ModelConfig::new(0, 0));
    let mut train = TrainConfig::default();
    if let Some(v) = get("alpha") {
        base.alpha = v.parse().unwrap();
    }
    if let Some(v) = get("beta") {
        base.beta = v.parse().unwrap();
    }
    if let Some(v) = get("epochs") {
        train.epochs = v.parse().unwrap();
    }
    if let Some(v) = get("batch") {
        train.batch_size = v.parse().unwrap();
    }
    if let Some(v) = get("lr") {
        train.learning_rate = v.parse().unwrap();
    }
    let held: Vec<(usize, usize)> = (1..conditions).map(|c| (2, c)).collect();

    let start = Instant::now();
    type Row = (u64, String, Vec<(f64, f64)>, f64);
    let results: Vec<Row> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for seed in 0..seeds {
            for layer in &layers {
                let mut model = base.clone();
                match layer.as_str() {
                    "y1" => model.mmd_layer = MmdLayer::Y1,
                    "z" => model.mmd_layer = MmdLayer::Z,
                    _ => model.beta = 0.0,
                }
                let mut cfg = RunConfig::new(
                    model,
                    TrainConfig { seed, ..train.clone() },
                    DataSource::Synthetic(SyntheticSpec {
                        condition_count: conditions,
                        seed,
                        ..SyntheticSpec::default()
                    }),
                );
                cfg.holdout = HoldoutPlan::new(&held);
                let layer = layer.clone();
                handles.push(scope.spawn(move || {
                    let data = load_data(&cfg.data).unwrap();
                    let out = run_training(&cfg, &data).unwrap();
                    let scores = (1..conditions)
                        .map(|c| {
                            let (src, truth) = out.eval_pair(c).unwrap();
                            let r = evaluate_transform(&out.model, &src, &truth, 0, c).unwrap();
                            (r.r_mean, r.r_var)
                        })
                        .collect();
                    let comp = compare_compactness(&out, seed).unwrap();
                    (seed, layer, scores, comp.after.total(Layer::Y1))
                }));
            }
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (seed, layer, scores, mmd_y1) in &results {
        let s: Vec<String> = scores.iter().map(|(m, v)| format!("r_mean {m:.4} r_var {v:.4}")).collect();
        println!("seed {seed} {layer:>4}  {}  mmd_y1 {mmd_y1:.5}", s.join(" | "));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
