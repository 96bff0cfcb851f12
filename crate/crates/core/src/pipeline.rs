//! End-to-end steps shared by the command line and the experiments: target
//! preparation, training, prediction, evaluation and diagnostics.

use alloc::format;
use alloc::vec::Vec;

use crate::config::RunConfig;
use crate::encoder::{level_lengths, level_strides, FeatureSequence};
use crate::eval::{self, DiagnosticsBins, MapTable, PositionBin, ProfileSample};
use crate::labels::{assign_positives, GroundTruthSegment, TrainingTargets};
use crate::model;
use crate::numerics::ParamStore;
use crate::postprocess::{run_postprocess, ProposalSet, TaskResults};
use crate::synth::SyntheticVideo;
use crate::train::{self, Example, TrainLogEntry};
use crate::{Error, Result};

/// Training targets of a window of `len` timesteps.
pub fn targets_for(cfg: &RunConfig, segments: &[GroundTruthSegment], len: usize, stride: f64) -> Result<TrainingTargets> {
    let n = cfg.encoder.levels;
    let ranges = cfg.regression_ranges_seconds()?;
    assign_positives(
        segments,
        &level_lengths(len, n),
        &level_strides(stride, n),
        &ranges,
        cfg.heads.num_verbs,
        cfg.heads.num_nouns,
        &cfg.labels,
    )
}

/// Segments of `segs` seen through the window `[w0, w0 + len]`, shifted to
/// window time. Segments keeping less than one stride are dropped.
fn window_segments(segs: &[GroundTruthSegment], w0: f64, len: f64, stride: f64) -> Vec<GroundTruthSegment> {
    segs.iter()
        .filter_map(|s| {
            let a = (s.start - w0).max(0.0);
            let b = (s.end - w0).min(len);
            (b - a >= stride).then_some(GroundTruthSegment {
                start: a,
                end: b,
                ..*s
            })
        })
        .collect()
}

/// Training examples; videos longer than the encoder's input limit are tiled
/// into consecutive windows (the last one aligned to the video end).
pub fn prepare_examples(cfg: &RunConfig, videos: &[SyntheticVideo]) -> Result<Vec<Example>> {
    let max = cfg.encoder.max_input_len;
    let mut out = Vec::new();
    for v in videos {
        let t = v.visual.len();
        let stride = v.visual.stride_seconds;
        let mut starts = Vec::new();
        if t <= max {
            starts.push(0);
        } else {
            let mut s = 0;
            while s + max < t {
                starts.push(s);
                s += max;
            }
            starts.push(t - max);
        }
        for s in starts {
            let len = (t - s).min(max);
            let (visual, audio, segs) = if len == t {
                (v.visual.clone(), v.audio.clone(), v.segments.clone())
            } else {
                let w0 = s as f64 * stride;
                (
                    v.visual.crop(s, len)?,
                    v.audio.crop(s, len)?,
                    window_segments(&v.segments, w0, len as f64 * stride, stride),
                )
            };
            let targets = targets_for(cfg, &segs, len, stride)?;
            out.push(Example { visual, audio, targets });
        }
    }
    Ok(out)
}

/// Fresh parameters, trained on `videos`.
pub fn train_model(
    cfg: &RunConfig,
    videos: &[SyntheticVideo],
    on_step: impl FnMut(&TrainLogEntry),
) -> Result<(ParamStore, Vec<TrainLogEntry>)> {
    cfg.validate()?;
    let mcfg = cfg.model();
    let mut store = model::init_params(&mcfg, cfg.seed)?;
    let examples = prepare_examples(cfg, videos)?;
    let log = train::train(&mut store, &mcfg, &examples, &cfg.effective_loss(), &cfg.optim, on_step)?;
    Ok((store, log))
}

fn check_input(cfg: &RunConfig, visual: &FeatureSequence) -> Result<()> {
    if visual.len() > cfg.encoder.max_input_len {
        return Err(Error::CropRequired {
            len: visual.len(),
            max: cfg.encoder.max_input_len,
        });
    }
    Ok(())
}

/// Decoded proposals of one video.
pub fn video_proposals(store: &ParamStore, cfg: &RunConfig, video: &SyntheticVideo) -> Result<ProposalSet> {
    check_input(cfg, &video.visual)?;
    let outputs = model::infer(store, &cfg.model(), &video.visual, &video.audio)?;
    model::proposals(&outputs, &video.video_id, video.duration, cfg.post.min_length)
}

/// Ranked detections of every video, for all three tasks.
pub fn predict(store: &ParamStore, cfg: &RunConfig, videos: &[SyntheticVideo]) -> Result<Vec<TaskResults>> {
    let post = cfg.effective_post();
    videos
        .iter()
        .map(|v| run_postprocess(&video_proposals(store, cfg, v)?, &post))
        .collect()
}

pub fn evaluate(results: &[TaskResults], videos: &[SyntheticVideo], cfg: &RunConfig) -> Result<MapTable> {
    let gts: Vec<Vec<GroundTruthSegment>> = videos.iter().map(|v| v.segments.clone()).collect();
    eval::mean_ap(results, &gts, &cfg.eval)
}

/// Diagnostic outputs over a set of videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub samples: Vec<ProfileSample>,
    pub distance: DiagnosticsBins,
    pub positions: Vec<PositionBin>,
}

/// Number of bins along the normalised segment axis.
pub const POSITION_BINS: usize = 10;

pub fn diagnose(store: &ParamStore, cfg: &RunConfig, videos: &[SyntheticVideo]) -> Result<Diagnostics> {
    let post = cfg.effective_post();
    let mut samples = Vec::new();
    for v in videos {
        let set = video_proposals(store, cfg, v)?;
        let targets = targets_for(cfg, &v.segments, v.visual.len(), v.visual.stride_seconds)?;
        samples.extend(eval::attribute_proposals(
            &set.proposals,
            &targets,
            &v.segments,
            &post.weights,
            post.top_k_verb,
            post.top_k_noun,
        )?);
    }
    let distance = eval::centre_distance_profile(&samples, &cfg.bins)?;
    let pos: Vec<(f64, f64, f64, f64)> = samples
        .iter()
        .map(|s| (s.position, s.centricity, s.actionness, s.tiou))
        .collect();
    let positions = eval::centricity_vs_actionness_profile(&pos, POSITION_BINS)?;
    Ok(Diagnostics {
        samples,
        distance,
        positions,
    })
}

/// Checks that a parameter store matches what `cfg` would register.
pub fn check_compatible(store: &ParamStore, cfg: &RunConfig) -> Result<()> {
    let fresh = model::init_params(&cfg.model(), 0)?;
    for (name, t) in fresh.iter() {
        let got = store
            .get(name)
            .map_err(|_| Error::config(format!("checkpoint lacks parameter `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::config(format!(
                "parameter `{name}` has shape {:?}, configuration expects {:?} (class counts or dims differ)",
                got.shape(),
                t.shape()
            )));
        }
    }
    if store.len() != fresh.len() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, configuration expects {}",
            store.len(),
            fresh.len()
        )));
    }
    Ok(())
}
