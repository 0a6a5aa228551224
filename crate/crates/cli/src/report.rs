//! Epoch logs, evaluation summary rows and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use ldl_age_core::{EvalResult, TrainReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::to_full_precision_json;
use crate::error::{Error, Result};

pub const EPOCH_LOG_HEADER: &str = "epoch,kl,l1,var,total,val_total,lr";
pub const EVAL_HEADER: &str = "method,mae,pearson,n";

/// One line per epoch: `epoch,kl,l1,var,total,val_total,lr`.
pub fn epoch_log(report: &TrainReport) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for e in &report.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch, e.train.kl, e.train.l1, e.train.variance, e.train.total, e.val_total, e.lr
        );
    }
    out
}

/// `method,mae,pearson,n`; an undefined correlation is written as `undefined`.
pub fn eval_row(method: &str, eval: &EvalResult) -> String {
    let pearson = eval
        .pearson
        .map_or_else(|| "undefined".to_string(), |r| r.to_string());
    format!("{method},{},{pearson},{}", eval.mae, eval.n)
}

/// Parses a row written by [`eval_row`].
pub fn parse_eval_row(line: &str) -> Result<(String, EvalResult)> {
    let bad = || Error::Format(format!("malformed evaluation row {line:?}"));
    let fields: Vec<&str> = line.trim().split(',').collect();
    let [method, mae, pearson, n] = fields[..] else {
        return Err(bad());
    };
    let pearson = match pearson {
        "undefined" => None,
        v => Some(v.parse().map_err(|_| bad())?),
    };
    Ok((
        method.to_string(),
        EvalResult {
            mae: mae.parse().map_err(|_| bad())?,
            pearson,
            n: n.parse().map_err(|_| bad())?,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of a single command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputDigest>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            started_at: timestamp(),
            finished_at: String::new(),
            status: "running".into(),
        }
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(OutputDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(&mut self, status: &str) {
        self.finished_at = timestamp();
        self.status = status.into();
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, to_full_precision_json(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Manifest location for a run whose output is a single file.
pub fn manifest_path_for_file(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
