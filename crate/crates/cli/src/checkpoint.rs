//! Checkpoint files: one JSON document holding the grid, the loss configuration
//! and every layer of the head.
//!
//! Reals are written in scientific notation with 17 significant digits, which
//! reproduces every `f64` exactly on load.

use std::fs;
use std::io;
use std::path::Path;

use ldl_age_core::{Activation, AgeGrid, DenseLayer, HybridLossConfig, ModelHead};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "ldl-age-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub grid: AgeGrid,
    pub loss: HybridLossConfig,
    pub head: ModelHead,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    min: u32,
    max: u32,
}

#[derive(Serialize, Deserialize)]
struct LossDoc {
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureDoc {
    input_dim: usize,
    hidden: Vec<usize>,
    outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    in_dim: usize,
    out_dim: usize,
    activation: String,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    grid: GridDoc,
    loss: LossDoc,
    architecture: ArchitectureDoc,
    layers: Vec<LayerDoc>,
}

pub(crate) fn serialize_grid<S: Serializer>(
    grid: &AgeGrid,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    GridDoc {
        min: grid.min(),
        max: grid.max(),
    }
    .serialize(s)
}

/// Compact JSON with every float written as `{:.16e}`.
pub(crate) struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub(crate) fn to_full_precision_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Format(format!("cannot serialize: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

impl Checkpoint {
    pub fn new(grid: AgeGrid, loss: HybridLossConfig, head: ModelHead) -> Result<Self> {
        if head.out_dim() != grid.len() {
            return Err(Error::Mismatch(format!(
                "head has {} outputs but the grid [{}, {}] has {} ages",
                head.out_dim(),
                grid.min(),
                grid.max(),
                grid.len()
            )));
        }
        Ok(Self { grid, loss, head })
    }

    pub fn to_json(&self) -> Result<String> {
        if self.head.parameters().any(|p| !p.is_finite()) {
            return Err(Error::Format("refusing to save non-finite weights".into()));
        }
        let layers = self.head.layers();
        let doc = CheckpointDoc {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            grid: GridDoc {
                min: self.grid.min(),
                max: self.grid.max(),
            },
            loss: LossDoc {
                lambda1: self.loss.lambda_kl(),
                lambda2: self.loss.lambda_l1(),
                lambda3: self.loss.lambda_var(),
                sigma: self.loss.sigma(),
            },
            architecture: ArchitectureDoc {
                input_dim: self.head.in_dim(),
                hidden: layers[..layers.len() - 1]
                    .iter()
                    .map(DenseLayer::out_dim)
                    .collect(),
                outputs: self.head.out_dim(),
            },
            layers: layers
                .iter()
                .map(|l| LayerDoc {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation().name().into(),
                    weights: l.weights().to_vec(),
                    biases: l.biases().to_vec(),
                })
                .collect(),
        };
        to_full_precision_json(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("malformed checkpoint: {e}")))?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Format(format!(
                "not a checkpoint (format {:?})",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                doc.version
            )));
        }
        let grid = AgeGrid::new(doc.grid.min, doc.grid.max)?;
        let loss = HybridLossConfig::new(
            doc.loss.lambda1,
            doc.loss.lambda2,
            doc.loss.lambda3,
            doc.loss.sigma,
        )?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                let activation = Activation::from_name(&l.activation).ok_or_else(|| {
                    Error::Format(format!("unknown activation {:?}", l.activation))
                })?;
                Ok(DenseLayer::new(
                    l.in_dim, l.out_dim, l.weights, l.biases, activation,
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = ModelHead::new(layers)?;
        let arch = &doc.architecture;
        let hidden: Vec<usize> = head.layers()[..head.layers().len() - 1]
            .iter()
            .map(DenseLayer::out_dim)
            .collect();
        if arch.input_dim != head.in_dim()
            || arch.outputs != head.out_dim()
            || arch.hidden != hidden
        {
            return Err(Error::Format(
                "architecture header disagrees with the stored layers".into(),
            ));
        }
        Self::new(grid, loss, head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
