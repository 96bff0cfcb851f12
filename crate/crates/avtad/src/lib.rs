//! File formats, the `avtad` command line and the ablation runner around
//! [`avtad_core`].
//!
//! - [`cfgfile`]: flat `key = value` configuration documents.
//! - [`dataset`]: dataset directories (JSON annotations plus `AVTF` feature blobs).
//! - [`formats`]: checkpoints, predictions and the CSV result tables.
//! - [`manifest`]: per-run reproduction records.
//! - [`ablate`]: settings grids trained and evaluated cell by cell.
//! - [`cli`]: the `generate`, `train`, `eval`, `diagnose` and `ablate` commands.

pub mod ablate;
pub mod cfgfile;
pub mod cli;
pub mod dataset;
mod error;
pub mod formats;
pub mod manifest;

pub use error::{AppError, Result};
