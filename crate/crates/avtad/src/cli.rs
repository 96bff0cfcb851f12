//! Command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use avtad_core::config::RunConfig;
use avtad_core::pipeline::{check_compatible, diagnose, evaluate, predict, train_model};
use avtad_core::synth::{generate_dataset, SyntheticVideo};
use clap::{Parser, Subcommand};

use crate::ablate::{ablation_csv, run_ablation, Grid};
use crate::cfgfile::load_config;
use crate::dataset::{read_dataset, write_atomic, write_dataset};
use crate::error::{AppError, Result};
use crate::formats::{diagnostics_csv, load_checkpoint, map_csv, positions_csv, save_checkpoint, save_predictions, train_log_csv};
use crate::manifest::{Manifest, VERSION};

#[derive(Debug, Parser)]
#[command(name = "avtad", version = VERSION, about = "Audio-visual temporal action detection on synthetic dense-action data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train split and eval split.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; receives `train/` and `eval/`.
        #[arg(long)]
        out: PathBuf,
        /// Data seed, overriding `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a detector and write a checkpoint and the loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model seed, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict on a dataset and write the mAP table.
    Eval {
        /// Defaults to the configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the centre-distance and position profiles of a trained model.
    Diagnose {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every cell of a settings grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=v1,v2;key=v1,v2`, e.g. `audio.enabled=true,false;centricity.enabled=true,false`.
        #[arg(long)]
        grid: String,
        /// Directory with `train/` and `eval/`; generated from the configuration when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

/// Checks that the videos fit the class counts and feature sizes of `cfg`.
pub fn check_dataset(videos: &[SyntheticVideo], cfg: &RunConfig) -> Result<()> {
    for v in videos {
        for s in &v.segments {
            if s.verb >= cfg.heads.num_verbs || s.noun >= cfg.heads.num_nouns {
                return Err(AppError::config(format!(
                    "{}: class ({}, {}) outside the configured {} verbs × {} nouns",
                    v.video_id, s.verb, s.noun, cfg.heads.num_verbs, cfg.heads.num_nouns
                )));
            }
        }
        if v.visual.dim() != cfg.synth.visual_dim || v.audio.dim() != cfg.synth.audio_dim {
            return Err(AppError::config(format!(
                "{}: feature sizes {}/{} differ from the configured {}/{}",
                v.video_id,
                v.visual.dim(),
                v.audio.dim(),
                cfg.synth.visual_dim,
                cfg.synth.audio_dim
            )));
        }
    }
    Ok(())
}

fn load_dataset(dir: &Path, cfg: &RunConfig) -> Result<Vec<SyntheticVideo>> {
    let videos = read_dataset(dir)?;
    check_dataset(&videos, cfg)?;
    Ok(videos)
}

/// Checkpoint parameters and the configuration to run them with.
fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(avtad_core::ParamStore, RunConfig)> {
    let (store, stored) = load_checkpoint(checkpoint)?;
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => stored,
    };
    check_compatible(&store, &cfg)?;
    Ok((store, cfg))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            cfg.validate()?;
            write_dataset(&generate_dataset(&cfg.synth, "train")?, &out.join("train"))?;
            write_dataset(&generate_dataset(&cfg.eval_synth(), "eval")?, &out.join("eval"))?;
            Manifest::new("generate", &cfg, &[]).write(&out)
        }
        Command::Train { config, dataset, out, seed } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let videos = load_dataset(&dataset, &cfg)?;
            create_dir(&out)?;
            let (store, log) = train_model(&cfg, &videos, |e| {
                if e.iteration % 50 == 0 {
                    eprintln!("iteration {:>5}  loss {:.4}  lr {:.5}", e.iteration, e.loss.total, e.learning_rate);
                }
            })?;
            save_checkpoint(&store, &cfg, &out.join("checkpoint.json"))?;
            write_atomic(&out.join("train_log.csv"), &train_log_csv(&log))?;
            Manifest::new("train", &cfg, &[&dataset]).write(&out)
        }
        Command::Eval { config, checkpoint, dataset, out } => {
            let (store, cfg) = load_model(&checkpoint, config.as_deref())?;
            let videos = load_dataset(&dataset, &cfg)?;
            create_dir(&out)?;
            let results = predict(&store, &cfg, &videos)?;
            let table = evaluate(&results, &videos, &cfg)?;
            save_predictions(&results, &out.join("predictions.json"))?;
            write_atomic(&out.join("map.csv"), &map_csv(&table))?;
            Manifest::new("eval", &cfg, &[&checkpoint, &dataset]).write(&out)
        }
        Command::Diagnose { config, checkpoint, dataset, out } => {
            let (store, cfg) = load_model(&checkpoint, config.as_deref())?;
            let videos = load_dataset(&dataset, &cfg)?;
            create_dir(&out)?;
            let d = diagnose(&store, &cfg, &videos)?;
            write_atomic(&out.join("diagnostics_relative.csv"), &diagnostics_csv(&d.distance.relative))?;
            write_atomic(&out.join("diagnostics_absolute.csv"), &diagnostics_csv(&d.distance.absolute))?;
            write_atomic(&out.join("positions.csv"), &positions_csv(&d.positions))?;
            Manifest::new("diagnose", &cfg, &[&checkpoint, &dataset]).write(&out)
        }
        Command::Ablate { config, grid, dataset, out, seed } => {
            let grid = Grid::parse(&grid)?;
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let (train, eval) = match &dataset {
                Some(d) => (load_dataset(&d.join("train"), &cfg)?, load_dataset(&d.join("eval"), &cfg)?),
                None => (generate_dataset(&cfg.synth, "train")?, generate_dataset(&cfg.eval_synth(), "eval")?),
            };
            create_dir(&out)?;
            let cells = run_ablation(&cfg, &grid, &train, &eval)?;
            write_atomic(&out.join("ablation.csv"), &ablation_csv(&grid, &cells))?;
            let inputs: Vec<&Path> = dataset.as_deref().into_iter().collect();
            Manifest::new("ablate", &cfg, &inputs).write(&out)
        }
    }
}

/// Parses `args` (program name first) and runs the command. Help and version
/// requests print and succeed; malformed command lines are usage errors.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(AppError::Usage(e.to_string())),
    }
}
