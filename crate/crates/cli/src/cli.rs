//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or inputs, 3 when training
//! diverges, 4 when a checkpoint does not match the data it is applied to.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldl_age_core::{
    fit, generate_synthetic, predict_clip, predict_utterance, AgeDistribution, AgeGrid,
    ClipPrediction, EvalResult, HybridLossConfig, Method, ModelHead, SyntheticSpec, TrainConfig,
};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{
    ablation_csv, align, comparison_csv, run_cells, CellResult, CellSpec, ExperimentSettings,
    DEFAULT_ABLATION,
};
use crate::report::{epoch_log, eval_row, manifest_path_for_file, RunManifest, EVAL_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "ldl-age",
    version,
    about = "Label distribution learning for age estimation from speaker embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a head on an embedding dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a `method,mae,pearson,n` row.
    Evaluate(EvaluateArgs),
    /// Write per-sample (or per-group) age predictions.
    Predict(PredictArgs),
    /// Generate a synthetic embedding dataset.
    Synth(SynthArgs),
    /// Run a method comparison or a (lambda3, sigma) ablation sweep.
    Ablate(AblateArgs),
}

/// Inclusive integer age range written as `min:max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeRange {
    pub min: u32,
    pub max: u32,
}

impl FromStr for AgeRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|e| format!("bad age {v:?}: {e}"))
        };
        Ok(AgeRange {
            min: parse(a)?,
            max: parse(b)?,
        })
    }
}

impl AgeRange {
    fn grid(self) -> Result<AgeGrid> {
        Ok(AgeGrid::new(self.min, self.max)?)
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

/// A `lambda3:sigma` ablation cell.
fn parse_cell(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LAMBDA3:SIGMA, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number {v:?}: {e}"))
    };
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgeDist {
    Uniform,
    TwoMode,
}

/// Optimizer and schedule settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    /// Hidden layer widths, comma separated; `--hidden ''` for a linear head.
    #[arg(long, value_delimiter = ',', default_value = "256")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Factor applied to the learning rate after a plateau.
    #[arg(long, default_value_t = 0.5)]
    pub lr_decay: f64,
    /// Epochs without validation improvement before decaying.
    #[arg(long, default_value_t = 2)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    /// Fraction of training samples held out (by speaker) for the schedule.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

impl OptimArgs {
    fn train_config(&self, seed: u64, deterministic: bool) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.lr,
            momentum: self.momentum,
            lr_decay_factor: self.lr_decay,
            patience_epochs: self.patience,
            min_lr: self.min_lr,
            max_epochs: self.max_epochs,
            seed,
            validation_fraction: self.val_fraction,
            deterministic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn hidden(&self) -> Vec<usize> {
        self.hidden.iter().copied().filter(|&w| w > 0).collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training dataset (`.csv` table or `.jsonl`).
    #[arg(long)]
    pub data: PathBuf,
    /// Loss preset: reg, cls, regcls or ldl.
    #[arg(long, default_value = "ldl", value_parser = parse_method)]
    pub method: Method,
    /// Override the preset's KL weight.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Override the preset's L1 weight.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Override the preset's variance weight.
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// Override the preset's target standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Age grid as MIN:MAX.
    #[arg(long, default_value = "1:100")]
    pub ages: AgeRange,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Seed for initialization, the validation split and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the checkpoint, epoch log and manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Accepted for symmetry; training is always reproducible for a fixed seed.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Column whose values group clips into utterances.
    #[arg(long)]
    pub group_by: Option<String>,
    /// Method label for the output row; inferred from the checkpoint's loss by default.
    #[arg(long)]
    pub label: Option<String>,
    /// Recorded in the manifest; evaluation uses no randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file for the evaluation row.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for symmetry; evaluation is always deterministic.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Column whose values group clips into utterances.
    #[arg(long)]
    pub group_by: Option<String>,
    /// Recorded in the manifest; prediction uses no randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file with `id,predicted_age` rows.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for symmetry; prediction is always deterministic.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Age range as MIN:MAX.
    #[arg(long, default_value = "18:80")]
    pub ages: AgeRange,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = AgeDist::Uniform)]
    pub age_dist: AgeDist,
    /// Clips per speaker; clips of one speaker share an age.
    #[arg(long, default_value_t = 1)]
    pub samples_per_speaker: usize,
    /// Seed of the fixed age-to-embedding map.
    #[arg(long, default_value_t = SyntheticSpec::default().mixing_seed)]
    pub mixing_seed: u64,
    /// Seed for ages and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset file (`.csv` or `.jsonl`).
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for symmetry; generation is always deterministic.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Compare these presets instead of running the (lambda3, sigma) grid.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Ablation cells as LAMBDA3:SIGMA pairs [default: 0.01:0.1,0.1:0.5,0.1:1,1:0.5,1:1,10:3].
    #[arg(long, value_delimiter = ',', value_parser = parse_cell, conflicts_with = "methods")]
    pub cells: Option<Vec<(f64, f64)>>,
    /// Age grid as MIN:MAX.
    #[arg(long, default_value = "1:100")]
    pub ages: AgeRange,
    /// Fraction of samples held out (by speaker) for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 3)]
    pub repeats: u64,
    /// Output directory.
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
    /// Run cells one after another instead of in parallel.
    #[arg(long)]
    pub deterministic: bool,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn loss_json(loss: &HybridLossConfig) -> serde_json::Value {
    json!({
        "lambda1": loss.lambda_kl(),
        "lambda2": loss.lambda_l1(),
        "lambda3": loss.lambda_var(),
        "sigma": loss.sigma(),
    })
}

fn train_json(cfg: &TrainConfig, hidden: &[usize]) -> serde_json::Value {
    json!({
        "hidden": hidden,
        "batch_size": cfg.batch_size,
        "initial_lr": cfg.initial_lr,
        "momentum": cfg.momentum,
        "lr_decay_factor": cfg.lr_decay_factor,
        "patience_epochs": cfg.patience_epochs,
        "min_lr": cfg.min_lr,
        "max_epochs": cfg.max_epochs,
        "seed": cfg.seed,
        "validation_fraction": cfg.validation_fraction,
        "deterministic": cfg.deterministic,
    })
}

/// Preset name when `loss` matches one exactly, `custom` otherwise.
fn method_label(loss: &HybridLossConfig) -> String {
    Method::ALL
        .into_iter()
        .find(|m| m.loss_config() == *loss)
        .map_or_else(|| "custom".to_string(), |m| m.name().to_string())
}

fn load_nonempty(path: &Path) -> Result<Dataset> {
    let data = load_dataset(path)?;
    ldl_age_core::sample::validate_dataset(&data.samples)?;
    Ok(data)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut loss = a.method.loss_config();
    let mut overrides = serde_json::Map::new();
    for (name, value) in [
        ("lambda1", a.lambda1),
        ("lambda2", a.lambda2),
        ("lambda3", a.lambda3),
        ("sigma", a.sigma),
    ] {
        let Some(v) = value else { continue };
        overrides.insert(name.into(), json!(v));
        loss = match name {
            "lambda1" => loss.with_lambda_kl(v),
            "lambda2" => loss.with_lambda_l1(v),
            "lambda3" => loss.with_lambda_var(v),
            _ => loss.with_sigma(v),
        }?;
    }
    let grid = a.ages.grid()?;
    let hidden = a.optim.hidden();
    let config = a.optim.train_config(a.seed, a.deterministic)?;
    let data = load_nonempty(&a.data)?;
    let dim = data.dim().unwrap_or(0);
    let head = ModelHead::init(dim, &hidden, grid.len(), a.seed)?;

    create_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "train",
        json!({
            "data": a.data,
            "method": a.method.name(),
            "overrides": overrides,
            "loss": loss_json(&loss),
            "grid": {"min": grid.min(), "max": grid.max()},
            "input_dim": dim,
            "train": train_json(&config, &hidden),
            "out": a.out,
        }),
        Some(a.seed),
    );
    manifest.inputs.push(a.data.clone());
    let manifest_path = a.out.join("manifest.json");

    let (head, report) = match fit(head, &data.samples, grid, &loss, &config) {
        Ok(r) => r,
        Err(e) => {
            manifest.finish(&format!("failed: {e}"));
            manifest.write(&manifest_path)?;
            return Err(e.into());
        }
    };
    let checkpoint_path = a.out.join("checkpoint.json");
    Checkpoint::new(grid, loss, head)?.save(&checkpoint_path)?;
    let log_path = a.out.join("train_log.csv");
    write_file(&log_path, &epoch_log(&report))?;
    manifest.add_output(&checkpoint_path)?;
    manifest.add_output(&log_path)?;
    if let serde_json::Value::Object(cfg) = &mut manifest.config {
        cfg.insert("epochs_run".into(), json!(report.epochs.len()));
        cfg.insert("stop_reason".into(), json!(report.stop_reason.name()));
    }
    manifest.finish("ok");
    manifest.write(&manifest_path)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "epochs={} stop={} train_total={:.6} val_total={:.6} val_mae={:.4}",
            report.epochs.len(),
            report.stop_reason.name(),
            last.train.total,
            last.val_total,
            last.val_mae
        );
    }
    Ok(())
}

/// One prediction per sample, or per group when `group_by` is given. Returns
/// `(key, true_age, predicted_age)` in order of first appearance.
fn predictions(
    ckpt: &Checkpoint,
    data: &Dataset,
    group_by: Option<&str>,
) -> Result<Vec<(String, f64, f64)>> {
    let dim = data.dim().unwrap_or(0);
    if dim != ckpt.head.in_dim() {
        return Err(Error::Mismatch(format!(
            "checkpoint expects {}-dimensional embeddings but the data has {dim}",
            ckpt.head.in_dim()
        )));
    }
    let (lo, hi) = (f64::from(ckpt.grid.min()), f64::from(ckpt.grid.max()));
    if let Some(s) = data.samples.iter().find(|s| s.age < lo || s.age > hi) {
        return Err(Error::Mismatch(format!(
            "sample {} has age {} outside the checkpoint grid [{}, {}]",
            s.sample_id,
            s.age,
            ckpt.grid.min(),
            ckpt.grid.max()
        )));
    }
    let clips = data
        .samples
        .iter()
        .map(|s| predict_clip(&ckpt.head, &s.embedding, ckpt.grid))
        .collect::<ldl_age_core::Result<Vec<ClipPrediction>>>()?;

    let Some(column) = group_by else {
        return Ok(data
            .samples
            .iter()
            .zip(&clips)
            .map(|(s, c)| (s.sample_id.clone(), s.age, c.point_estimate))
            .collect());
    };
    let keys = data
        .column(column)
        .ok_or_else(|| Error::Format(format!("dataset has no column {column:?}")))?;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, key) in keys.iter().enumerate() {
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[key];
            let age = data.samples[members[0]].age;
            if members.iter().any(|&i| data.samples[i].age != age) {
                return Err(Error::Format(format!(
                    "clips of group {key:?} disagree on the age"
                )));
            }
            let group: Vec<ClipPrediction> = members.iter().map(|&i| clips[i].clone()).collect();
            Ok((key.to_string(), age, predict_utterance(&group)?))
        })
        .collect()
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_nonempty(&a.data)?;
    let preds = predictions(&ckpt, &data, a.group_by.as_deref())?;
    let pairs: Vec<(f64, f64)> = preds.iter().map(|(_, t, y)| (*t, *y)).collect();
    let eval: EvalResult = ldl_age_core::evaluate(&pairs)?;
    let label = a.label.clone().unwrap_or_else(|| method_label(&ckpt.loss));
    let row = eval_row(&label, &eval);
    println!("{row}");
    write_file(&a.out, &format!("{EVAL_HEADER}\n{row}\n"))?;

    let mut manifest = RunManifest::new(
        "evaluate",
        json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "group_by": a.group_by,
            "label": label,
            "out": a.out,
        }),
        Some(a.seed),
    );
    manifest.inputs = vec![a.checkpoint.clone(), a.data.clone()];
    manifest.add_output(&a.out)?;
    manifest.finish("ok");
    manifest.write(&manifest_path_for_file(&a.out))
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_nonempty(&a.data)?;
    let preds = predictions(&ckpt, &data, a.group_by.as_deref())?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::Format(e.to_string()))?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["id", "predicted_age"])?;
        for (key, _, y) in &preds {
            w.write_record([key.as_str(), &y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::Format(format!("{}: {e}", a.out.display())))?;

    let mut manifest = RunManifest::new(
        "predict",
        json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "group_by": a.group_by,
            "out": a.out,
        }),
        Some(a.seed),
    );
    manifest.inputs = vec![a.checkpoint.clone(), a.data.clone()];
    manifest.add_output(&a.out)?;
    manifest.finish("ok");
    manifest.write(&manifest_path_for_file(&a.out))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_samples: a.n,
        dim: a.dim,
        age_min: a.ages.min,
        age_max: a.ages.max,
        noise_sigma: a.noise,
        seed: a.seed,
        age_distribution: match a.age_dist {
            AgeDist::Uniform => AgeDistribution::Uniform,
            AgeDist::TwoMode => AgeDistribution::TwoMode,
        },
        samples_per_speaker: a.samples_per_speaker,
        mixing_seed: a.mixing_seed,
    };
    let samples = generate_synthetic(&spec)?;
    save_dataset(&a.out, &Dataset::from_samples(samples))?;

    let mut manifest = RunManifest::new(
        "synth",
        json!({
            "n": spec.n_samples,
            "dim": spec.dim,
            "ages": {"min": spec.age_min, "max": spec.age_max},
            "noise": spec.noise_sigma,
            "age_dist": format!("{:?}", a.age_dist).to_lowercase(),
            "samples_per_speaker": spec.samples_per_speaker,
            "mixing_seed": spec.mixing_seed,
            "out": a.out,
        }),
        Some(a.seed),
    );
    manifest.add_output(&a.out)?;
    manifest.finish("ok");
    manifest.write(&manifest_path_for_file(&a.out))
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(Error::Format("--repeats must be at least 1".into()));
    }
    let specs: Vec<CellSpec> = match (&a.methods, &a.cells) {
        (Some(methods), _) => methods.iter().map(|&m| CellSpec::Method(m)).collect(),
        (None, cells) => cells
            .as_deref()
            .unwrap_or(&DEFAULT_ABLATION)
            .iter()
            .map(|&(lambda3, sigma)| CellSpec::Ablation { lambda3, sigma })
            .collect(),
    };
    let settings = ExperimentSettings {
        grid: a.ages.grid()?,
        hidden: a.optim.hidden(),
        test_fraction: a.test_fraction,
        seeds: (a.seed..a.seed + a.repeats).collect(),
        train: a.optim.train_config(a.seed, true)?,
    };
    let data = load_nonempty(&a.data)?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "ablate",
        json!({
            "data": a.data,
            "cells": specs.iter().map(|s| {
                let loss = s.loss().ok();
                json!({"label": s.label(), "loss": loss.as_ref().map(loss_json)})
            }).collect::<Vec<_>>(),
            "experiment": settings,
            "train": train_json(&settings.train, &settings.hidden),
            "parallel": !a.deterministic,
            "out": a.out,
        }),
        Some(a.seed),
    );
    manifest.inputs.push(a.data.clone());

    let cells = run_cells(&data.samples, &specs, &settings, !a.deterministic);
    for cell in &cells {
        for path in write_cell(&a.out, cell, settings.grid)? {
            manifest.add_output(&path)?;
        }
    }
    let table = match a.methods {
        Some(_) => comparison_csv(&cells),
        None => ablation_csv(&cells),
    };
    let csv_path = a.out.join("results.csv");
    let txt_path = a.out.join("results.txt");
    write_file(&csv_path, &table)?;
    write_file(&txt_path, &align(&table))?;
    manifest.add_output(&csv_path)?;
    manifest.add_output(&txt_path)?;
    let failed: Vec<String> = cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.spec.label())))
        .collect();
    for f in &failed {
        log::warn!("cell failed: {f}");
    }
    manifest.finish(if failed.is_empty() {
        "ok"
    } else {
        "ok with failed cells"
    });
    manifest.write(&a.out.join("manifest.json"))?;
    print!("{}", align(&table));
    Ok(())
}

/// Writes a cell's per-seed artifacts under `out/cells/<label>/` and returns their paths.
fn write_cell(out: &Path, cell: &CellResult, grid: AgeGrid) -> Result<Vec<PathBuf>> {
    let dir = out.join("cells").join(cell.spec.label());
    create_dir(&dir)?;
    let mut written = Vec::new();
    if let Some(e) = &cell.error {
        let path = dir.join("error.txt");
        write_file(&path, &format!("{e}\n"))?;
        written.push(path);
        return Ok(written);
    }
    let loss = cell.spec.loss().map_err(|e| Error::Format(e.to_string()))?;
    for run in &cell.runs {
        let seed_dir = dir.join(format!("seed_{}", run.seed));
        create_dir(&seed_dir)?;
        let ckpt = seed_dir.join("checkpoint.json");
        Checkpoint::new(grid, loss, run.head.clone())?.save(&ckpt)?;
        let log = seed_dir.join("train_log.csv");
        write_file(&log, &epoch_log(&run.report))?;
        let eval = seed_dir.join("eval.csv");
        write_file(
            &eval,
            &format!(
                "{EVAL_HEADER}\n{}\n",
                eval_row(&cell.spec.label(), &run.eval)
            ),
        )?;
        written.extend([ckpt, log, eval]);
    }
    Ok(written)
}
