//! Ablation grids: train and evaluate every combination of a few settings.

use avtad_core::config::RunConfig;
use avtad_core::eval::MapTable;
use avtad_core::pipeline::{evaluate, predict, train_model};
use avtad_core::postprocess::Task;
use avtad_core::synth::SyntheticVideo;
use rayon::prelude::*;

use crate::error::{AppError, Result};

/// Keys a grid may vary.
pub const AXES: &[&str] = &[
    "audio.enabled",
    "visual.enabled",
    "centricity.enabled",
    "fusion.strategy",
    "loss.lambda1",
    "loss.lambda3",
    "score.beta",
];

/// Axes in the order given; cells enumerate them with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    /// Parses `key=v1,v2;key=v1,v2`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let Some((key, values)) = part.split_once('=') else {
                return Err(AppError::Usage(format!("grid axis `{part}` is not `key=v1,v2,…`")));
            };
            let key = key.trim();
            if !AXES.contains(&key) {
                return Err(AppError::Usage(format!("`{key}` is not an ablation axis ({})", AXES.join(", "))));
            }
            if axes.iter().any(|(k, _)| k == key) {
                return Err(AppError::Usage(format!("grid axis `{key}` given twice")));
            }
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(AppError::Usage(format!("grid axis `{key}` has no values")));
            }
            axes.push((key.to_string(), values));
        }
        if axes.is_empty() {
            return Err(AppError::Usage("empty ablation grid".into()));
        }
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(key, value)` settings of every cell.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut out = vec![Vec::new()];
        for (key, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|cell: Vec<(String, String)>| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        out
    }

    /// Configuration of each cell; fails before any training if one is invalid.
    pub fn configs(&self, base: &RunConfig) -> Result<Vec<RunConfig>> {
        self.cells()
            .iter()
            .map(|cell| {
                let mut c = base.clone();
                for (k, v) in cell {
                    c.set(k, v)?;
                }
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub settings: Vec<(String, String)>,
    pub table: MapTable,
}

/// Trains on `train` and scores on `eval` with the settings of `cfg`.
pub fn run_cell(cfg: &RunConfig, train: &[SyntheticVideo], eval: &[SyntheticVideo]) -> Result<MapTable> {
    let (store, _) = train_model(cfg, train, |_| {})?;
    let results = predict(&store, cfg, eval)?;
    Ok(evaluate(&results, eval, cfg)?)
}

/// Every cell of `grid`, each trained from the base seed, in parallel.
pub fn run_ablation(base: &RunConfig, grid: &Grid, train: &[SyntheticVideo], eval: &[SyntheticVideo]) -> Result<Vec<CellResult>> {
    let configs = grid.configs(base)?;
    let tables: Vec<MapTable> = configs
        .par_iter()
        .map(|c| run_cell(c, train, eval))
        .collect::<Result<_>>()?;
    Ok(grid
        .cells()
        .into_iter()
        .zip(tables)
        .map(|(settings, table)| CellResult { settings, table })
        .collect())
}

/// One row per cell: the axis values, then the average mAP of each task.
pub fn ablation_csv(grid: &Grid, cells: &[CellResult]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = grid.axes.iter().map(|(k, _)| k.clone()).collect();
    header.extend(Task::ALL.iter().map(|t| format!("avg_map_{}", t.as_str())));
    w.write_record(&header).expect("in-memory csv write");
    for c in cells {
        let mut row: Vec<String> = c.settings.iter().map(|(_, v)| v.clone()).collect();
        row.extend(Task::ALL.iter().map(|&t| format!("{}", c.table.average(t))));
        w.write_record(&row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}
