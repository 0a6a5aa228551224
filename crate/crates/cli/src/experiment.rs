//! Train/evaluate cells for method comparisons and (λ₃, σ) ablations.
//!
//! A cell is one loss configuration trained and tested once per seed. For each
//! seed the dataset is split speaker-exclusively into train and test parts, the
//! head is initialised from the seed, and training uses the seed for its own
//! validation split and shuffling. Cells share seeds, so every configuration
//! sees the same splits and initial weights.

use std::fmt::Write as _;

use ldl_age_core::trainer::split_indices;
use ldl_age_core::{
    evaluate_head, fit, AgeGrid, EvalResult, HybridLossConfig, LabeledSample, Method, ModelHead,
    TrainConfig, TrainReport,
};
use rayon::prelude::*;
use serde::Serialize;

/// Everything about a run that is shared across cells.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSettings {
    #[serde(serialize_with = "crate::checkpoint::serialize_grid")]
    pub grid: AgeGrid,
    pub hidden: Vec<usize>,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub train: TrainConfig,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            grid: AgeGrid::default(),
            hidden: vec![256],
            test_fraction: 0.2,
            seeds: vec![1, 2, 3],
            train: TrainConfig::default(),
        }
    }
}

/// (λ₃, σ) pairs of the default ablation grid, with λ₁ = λ₂ = 1.
pub const DEFAULT_ABLATION: [(f64, f64); 6] = [
    (0.01, 0.1),
    (0.1, 0.5),
    (0.1, 1.0),
    (1.0, 0.5),
    (1.0, 1.0),
    (10.0, 3.0),
];

#[derive(Debug, Clone, PartialEq)]
pub enum CellSpec {
    Method(Method),
    Ablation { lambda3: f64, sigma: f64 },
}

impl CellSpec {
    pub fn loss(&self) -> anyhow::Result<HybridLossConfig> {
        Ok(match self {
            CellSpec::Method(m) => m.loss_config(),
            CellSpec::Ablation { lambda3, sigma } => {
                HybridLossConfig::new(1.0, 1.0, *lambda3, *sigma)?
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            CellSpec::Method(m) => m.name().to_string(),
            CellSpec::Ablation { lambda3, sigma } => format!("l3_{lambda3}_s_{sigma}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub eval: EvalResult,
    pub report: TrainReport,
    pub head: ModelHead,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub spec: CellSpec,
    pub runs: Vec<SeedRun>,
    /// First error hit by the cell, if any. Failed cells have no runs.
    pub error: Option<String>,
}

impl CellResult {
    pub fn mean_mae(&self) -> Option<f64> {
        mean(self.runs.iter().map(|r| r.eval.mae))
    }

    /// Mean over the seeds whose correlation is defined.
    pub fn mean_pearson(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.eval.pearson))
    }

    pub fn test_count(&self) -> usize {
        self.runs.iter().map(|r| r.eval.n).sum()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Trains one loss configuration with one seed and evaluates it on the held-out part.
pub fn run_seed(
    data: &[LabeledSample],
    loss: &HybridLossConfig,
    settings: &ExperimentSettings,
    seed: u64,
) -> ldl_age_core::Result<SeedRun> {
    let (train_idx, test_idx) = split_indices(data, settings.test_fraction, seed)?;
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let dim = data[0].embedding.len();
    let head = ModelHead::init(dim, &settings.hidden, settings.grid.len(), seed)?;
    let config = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let (head, report) = fit(head, &train, settings.grid, loss, &config)?;
    let eval = evaluate_head(
        &head,
        settings.grid,
        test_idx
            .iter()
            .map(|&i| (data[i].embedding.as_slice(), data[i].age)),
    )?;
    Ok(SeedRun {
        seed,
        eval,
        report,
        head,
    })
}

pub fn run_cell(
    data: &[LabeledSample],
    spec: CellSpec,
    settings: &ExperimentSettings,
) -> CellResult {
    let outcome = spec.loss().and_then(|loss| {
        settings
            .seeds
            .iter()
            .map(|&seed| run_seed(data, &loss, settings, seed).map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()
    });
    match outcome {
        Ok(runs) => CellResult {
            spec,
            runs,
            error: None,
        },
        Err(e) => CellResult {
            spec,
            runs: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Runs every cell; a failing cell is recorded and the others still run.
/// Results come back in `specs` order whether or not cells run in parallel.
pub fn run_cells(
    data: &[LabeledSample],
    specs: &[CellSpec],
    settings: &ExperimentSettings,
    parallel: bool,
) -> Vec<CellResult> {
    if parallel {
        specs
            .par_iter()
            .map(|s| run_cell(data, s.clone(), settings))
            .collect()
    } else {
        specs
            .iter()
            .map(|s| run_cell(data, s.clone(), settings))
            .collect()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Method comparison as CSV: one `method,mae,pearson,n` row per cell.
pub fn comparison_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("method,mae,pearson,n\n");
    for c in cells {
        match &c.error {
            None => {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    c.spec.label(),
                    fmt_opt(c.mean_mae()),
                    fmt_opt(c.mean_pearson()),
                    c.test_count()
                );
            }
            Some(_) => {
                let _ = writeln!(out, "{},failed,failed,0", c.spec.label());
            }
        }
    }
    out
}

/// Ablation table as CSV: a `lambda3` row, a `sigma` row and an `mae` row with
/// one column per cell.
pub fn ablation_csv(cells: &[CellResult]) -> String {
    let mut l3 = String::from("lambda3");
    let mut sigma = String::from("sigma");
    let mut mae = String::from("mae");
    for c in cells {
        if let CellSpec::Ablation { lambda3, sigma: s } = c.spec {
            let _ = write!(l3, ",{lambda3}");
            let _ = write!(sigma, ",{s}");
            let v = if c.error.is_some() {
                "failed".to_string()
            } else {
                fmt_opt(c.mean_mae())
            };
            let _ = write!(mae, ",{v}");
        }
    }
    format!("{l3}\n{sigma}\n{mae}\n")
}

/// Renders CSV text as space-aligned columns.
pub fn align(csv_text: &str) -> String {
    let rows: Vec<Vec<&str>> = csv_text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:>width$}", width = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
