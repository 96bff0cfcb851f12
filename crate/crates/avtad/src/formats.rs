//! Checkpoints, predictions, result tables and diagnostics on disk.

use std::fs;
use std::path::Path;

use avtad_core::config::RunConfig;
use avtad_core::eval::{BinRow, MapTable, PositionBin};
use avtad_core::postprocess::{Detection, DetectionResult, Task, TaskResults};
use avtad_core::train::TrainLogEntry;
use avtad_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::cfgfile::parse_config;
use crate::dataset::write_atomic;
use crate::error::{AppError, Result};

const CHECKPOINT_FORMAT: &str = "avtad-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Trained parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Canonical `key = value` text of the run configuration.
    pub config: String,
    pub params: Vec<ParamRecord>,
}

fn json_error(name: &str, e: serde_json::Error) -> AppError {
    AppError::data(format!("{name}: line {} column {}: {e}", e.line(), e.column()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn save_checkpoint(store: &ParamStore, cfg: &RunConfig, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed: store.seed(),
        config: cfg.to_canonical_text(),
        params: store
            .iter()
            .map(|(name, t)| ParamRecord {
                name: name.into(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    write_atomic(path, &serde_json::to_vec(&file).expect("plain data serialises"))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, RunConfig)> {
    let name = path.display().to_string();
    let file: CheckpointFile = serde_json::from_str(&read_text(path)?).map_err(|e| json_error(&name, e))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(AppError::data(format!(
            "{name}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    let cfg = parse_config(&file.config)?;
    let mut store = ParamStore::new(file.seed);
    for p in file.params {
        let t = Tensor::new(p.shape, p.data).map_err(|e| AppError::data(format!("{name}: `{}`: {e}", p.name)))?;
        store.insert(&p.name, t).map_err(|e| AppError::data(format!("{name}: {e}")))?;
    }
    Ok((store, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub verb_id: usize,
    pub noun_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoPredictions {
    pub video_id: String,
    pub verb: Vec<DetectionRecord>,
    pub noun: Vec<DetectionRecord>,
    pub action: Vec<DetectionRecord>,
}

fn records(r: &DetectionResult) -> Vec<DetectionRecord> {
    r.detections
        .iter()
        .map(|d| DetectionRecord {
            start_seconds: d.start,
            end_seconds: d.end,
            verb_id: d.verb,
            noun_id: d.noun,
            score: d.score,
        })
        .collect()
}

fn detections(task: Task, r: &[DetectionRecord]) -> DetectionResult {
    DetectionResult {
        task,
        detections: r
            .iter()
            .map(|d| Detection {
                start: d.start_seconds,
                end: d.end_seconds,
                verb: d.verb_id,
                noun: d.noun_id,
                score: d.score,
            })
            .collect(),
    }
}

pub fn to_records(results: &[TaskResults]) -> Vec<VideoPredictions> {
    results
        .iter()
        .map(|r| VideoPredictions {
            video_id: r.video_id.clone(),
            verb: records(&r.verb),
            noun: records(&r.noun),
            action: records(&r.action),
        })
        .collect()
}

pub fn from_records(records: &[VideoPredictions]) -> Vec<TaskResults> {
    records
        .iter()
        .map(|r| TaskResults {
            video_id: r.video_id.clone(),
            verb: detections(Task::Verb, &r.verb),
            noun: detections(Task::Noun, &r.noun),
            action: detections(Task::Action, &r.action),
        })
        .collect()
}

pub fn save_predictions(results: &[TaskResults], path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(&to_records(results)).expect("plain data serialises"))
}

pub fn load_predictions(path: &Path) -> Result<Vec<TaskResults>> {
    let name = path.display().to_string();
    let recs: Vec<VideoPredictions> = serde_json::from_str(&read_text(path)?).map_err(|e| json_error(&name, e))?;
    Ok(from_records(&recs))
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub task: String,
    /// A tIoU threshold, or `avg` for the row mean.
    pub threshold: String,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// Task × threshold rows, each task followed by its average row.
pub fn map_rows(table: &MapTable) -> Vec<MapRow> {
    let mut out = Vec::new();
    for task in Task::ALL {
        for (i, t) in table.thresholds.iter().enumerate() {
            out.push(MapRow {
                task: task.as_str().into(),
                threshold: format!("{t}"),
                map: table.get(task, i),
            });
        }
        out.push(MapRow {
            task: task.as_str().into(),
            threshold: "avg".into(),
            map: table.average(task),
        });
    }
    out
}

pub fn map_csv(table: &MapTable) -> Vec<u8> {
    csv_bytes(map_rows(table))
}

pub fn parse_map_csv(bytes: &[u8]) -> Result<Vec<MapRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| AppError::data(format!("map table: {e}")))
}

/// One centre-distance bin; statistics are empty when no proposal fell in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub bin_low: f64,
    pub bin_high: f64,
    /// `XS` … `XL`, or `all` for the pooled rows.
    pub duration_group: String,
    pub mean_tiou: Option<f64>,
    pub mean_conf_with_centricity: Option<f64>,
    pub mean_conf_without: Option<f64>,
    pub count: usize,
}

pub fn diagnostic_rows(rows: &[BinRow]) -> Vec<DiagnosticRow> {
    rows.iter()
        .map(|r| DiagnosticRow {
            bin_low: r.bin_low,
            bin_high: r.bin_high,
            duration_group: r.group.map_or("all", |g| g.as_str()).into(),
            mean_tiou: r.stats.map(|s| s.mean_tiou),
            mean_conf_with_centricity: r.stats.map(|s| s.mean_conf_with_centricity),
            mean_conf_without: r.stats.map(|s| s.mean_conf_without),
            count: r.stats.map_or(0, |s| s.count),
        })
        .collect()
}

pub fn diagnostics_csv(rows: &[BinRow]) -> Vec<u8> {
    csv_bytes(diagnostic_rows(rows))
}

pub fn parse_diagnostics_csv(bytes: &[u8]) -> Result<Vec<DiagnosticRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| AppError::data(format!("diagnostics table: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PositionRow {
    position_low: f64,
    position_high: f64,
    mean_centricity: Option<f64>,
    mean_actionness: Option<f64>,
    mean_tiou: Option<f64>,
    count: usize,
}

/// Centricity and action-ness along the normalised segment axis.
pub fn positions_csv(bins: &[PositionBin]) -> Vec<u8> {
    csv_bytes(bins.iter().map(|b| {
        let some = |v: f64| (b.count > 0).then_some(v);
        PositionRow {
            position_low: b.low,
            position_high: b.high,
            mean_centricity: some(b.mean_centricity),
            mean_actionness: some(b.mean_actionness),
            mean_tiou: some(b.mean_tiou),
            count: b.count,
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LogRow {
    iteration: usize,
    learning_rate: f64,
    total: f64,
    regression: f64,
    classification: f64,
    boundary: f64,
    centricity: f64,
    grad_norm: f64,
}

pub fn train_log_csv(log: &[TrainLogEntry]) -> Vec<u8> {
    csv_bytes(log.iter().map(|e| LogRow {
        iteration: e.iteration,
        learning_rate: e.learning_rate,
        total: e.loss.total,
        regression: e.loss.regression,
        classification: e.loss.classification,
        boundary: e.loss.boundary,
        centricity: e.loss.centricity,
        grad_norm: e.grad_norm,
    }))
}
