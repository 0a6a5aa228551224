//! Files, experiments and the command-line front end for `ldl-age-core`.
//!
//! - [`dataset`]: delimited-table and JSON-lines embedding datasets.
//! - [`checkpoint`]: full-precision JSON checkpoints.
//! - [`experiment`]: method comparisons and (λ₃, σ) ablation sweeps.
//! - [`report`]: epoch logs, evaluation rows and run manifests.
//! - [`cli`]: argument parsing and the subcommands.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{Error, Result};
