//! The assembled detector: encoders, fusion, heads and their losses.
//!
//! Stream layout by configuration:
//!
//! - one modality enabled: every head runs on that modality's pyramid;
//! - feature fusion: every head runs on the fused pyramid and an audio
//!   classifier on the audio pyramid supplies `p_a`;
//! - score fusion: every head runs on the visual pyramid and the audio
//!   classifier's scores are merged into the class scores;
//! - proposal fusion: a full visual detector and a full audio detector whose
//!   proposal sets are concatenated.

use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::{self, EncoderConfig, FeaturePyramid, FeatureSequence, Modality};
use crate::fusion::{self, FusionStrategy};
use crate::heads::{self, split_class_scores, HeadConfig, HeadKind, HeadOutputs, LevelOutputs};
use crate::labels::TrainingTargets;
use crate::losses::{self, LossBreakdown, LossWeights, StreamPredictions};
use crate::numerics::{Graph, ParamStore, Var};
use crate::postprocess::{decode_proposals, ProposalSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub visual_enabled: bool,
    pub audio_enabled: bool,
    pub fusion: FusionStrategy,
    pub fusion_residual: bool,
    pub centricity_enabled: bool,
    pub boundary_enabled: bool,
}

/// How the two modalities are wired for a given configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    VisualOnly,
    AudioOnly,
    Feature,
    Score,
    Proposal,
}

impl ModelConfig {
    pub fn layout(&self) -> Result<Layout> {
        Ok(match (self.visual_enabled, self.audio_enabled) {
            (true, false) => Layout::VisualOnly,
            (false, true) => Layout::AudioOnly,
            (true, true) => match self.fusion {
                FusionStrategy::FeatureFusionConcat | FusionStrategy::FeatureFusionXattn => Layout::Feature,
                FusionStrategy::ScoreFusionAdd | FusionStrategy::ScoreFusionMul => Layout::Score,
                FusionStrategy::ProposalFusion => Layout::Proposal,
            },
            (false, false) => return Err(Error::config("both modalities disabled")),
        })
    }

    /// Names of the full head sets (`heads.{name}.*`).
    fn streams(&self) -> Result<&'static [&'static str]> {
        Ok(match self.layout()? {
            Layout::Proposal => &["main", "aux"],
            _ => &["main"],
        })
    }

    fn has_audio_classifier(&self) -> Result<bool> {
        Ok(matches!(self.layout()?, Layout::Feature | Layout::Score))
    }
}

pub const AUDIO_CLS_PREFIX: &str = "heads.audio.cls";

/// Registers every parameter the configuration uses.
pub fn register(store: &mut ParamStore, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.encoder.dim;
    if cfg.visual_enabled {
        encoder::register_params(store, &Modality::Visual.encoder_prefix(), cfg.visual_dim, &cfg.encoder)?;
    }
    if cfg.audio_enabled {
        encoder::register_params(store, &Modality::Audio.encoder_prefix(), cfg.audio_dim, &cfg.encoder)?;
    }
    if cfg.layout()? == Layout::Feature {
        fusion::register_params(store, cfg.fusion, d, cfg.fusion_residual)?;
    }
    for stream in cfg.streams()? {
        heads::register_head(store, &heads::head_prefix(stream, HeadKind::Classification), HeadKind::Classification, d, &cfg.heads)?;
        heads::register_head(store, &heads::head_prefix(stream, HeadKind::Regression), HeadKind::Regression, d, &cfg.heads)?;
        if cfg.centricity_enabled {
            heads::register_head(store, &heads::head_prefix(stream, HeadKind::Centricity), HeadKind::Centricity, d, &cfg.heads)?;
        }
        if cfg.boundary_enabled {
            heads::register_head(store, &heads::head_prefix(stream, HeadKind::Boundary), HeadKind::Boundary, d, &cfg.heads)?;
        }
    }
    if cfg.has_audio_classifier()? {
        heads::register_head(store, AUDIO_CLS_PREFIX, HeadKind::Classification, d, &cfg.heads)?;
    }
    Ok(())
}

/// Fresh parameters for `cfg` drawn from `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new(seed);
    register(&mut store, cfg)?;
    Ok(store)
}

/// Per-level head nodes of one detector stream.
#[derive(Debug, Clone)]
pub struct StreamNodes {
    pub classes: Vec<Var>,
    pub offsets: Vec<Var>,
    pub centricity: Option<Vec<Var>>,
    pub boundary: Option<Vec<Var>>,
    pub strides: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub layout: Layout,
    pub streams: Vec<StreamNodes>,
    /// Audio classifier on the audio pyramid (feature and score fusion).
    pub audio_classes: Option<Vec<Var>>,
}

fn run_stream(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, name: &str, p: &FeaturePyramid) -> Result<StreamNodes> {
    let h = &cfg.heads;
    let classes = heads::classification_head(g, store, &heads::head_prefix(name, HeadKind::Classification), p, h)?;
    let offsets = heads::regression_head(g, store, &heads::head_prefix(name, HeadKind::Regression), p, h)?;
    let centricity = if cfg.centricity_enabled {
        Some(heads::centricity_head(g, store, &heads::head_prefix(name, HeadKind::Centricity), p, h)?)
    } else {
        None
    };
    let boundary = if cfg.boundary_enabled {
        Some(heads::boundary_confidence_head(g, store, &heads::head_prefix(name, HeadKind::Boundary), p, h, true)?)
    } else {
        None
    };
    Ok(StreamNodes {
        classes,
        offsets,
        centricity,
        boundary,
        strides: p.level_strides.clone(),
    })
}

/// Builds the whole forward pass for one video.
pub fn forward(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    visual: &FeatureSequence,
    audio: &FeatureSequence,
) -> Result<Forward> {
    let layout = cfg.layout()?;
    if visual.len() != audio.len() || visual.stride_seconds != audio.stride_seconds {
        return Err(Error::Alignment {
            visual: visual.len(),
            audio: audio.len(),
        });
    }
    let fv = if cfg.visual_enabled {
        Some(encoder::encode(g, store, visual, &cfg.encoder)?)
    } else {
        None
    };
    let fa = if cfg.audio_enabled {
        Some(encoder::encode(g, store, audio, &cfg.encoder)?)
    } else {
        None
    };
    let mut streams = Vec::new();
    let mut audio_classes = None;
    match layout {
        Layout::VisualOnly => streams.push(run_stream(g, store, cfg, "main", fv.as_ref().expect("visual"))?),
        Layout::AudioOnly => streams.push(run_stream(g, store, cfg, "main", fa.as_ref().expect("audio"))?),
        Layout::Feature | Layout::Score => {
            let (fv, fa) = (fv.expect("visual"), fa.expect("audio"));
            let main = if layout == Layout::Feature {
                fusion::fuse_pyramids(g, store, &fv, &fa, cfg.fusion, cfg.fusion_residual, cfg.encoder.positional)?
            } else {
                fv
            };
            streams.push(run_stream(g, store, cfg, "main", &main)?);
            audio_classes = Some(heads::classification_head(g, store, AUDIO_CLS_PREFIX, &fa, &cfg.heads)?);
        }
        Layout::Proposal => {
            streams.push(run_stream(g, store, cfg, "main", fv.as_ref().expect("visual"))?);
            streams.push(run_stream(g, store, cfg, "aux", fa.as_ref().expect("audio"))?);
        }
    }
    Ok(Forward {
        layout,
        streams,
        audio_classes,
    })
}

fn cat(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    g.concat_rows(parts)
}

/// Total loss node and its breakdown, summed over streams.
pub fn loss(
    g: &mut Graph,
    fwd: &Forward,
    targets: &TrainingTargets,
    num_verbs: usize,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut totals = Vec::new();
    let mut sum = LossBreakdown::default();
    for (i, s) in fwd.streams.iter().enumerate() {
        let pred = StreamPredictions {
            classes: cat(g, &s.classes)?,
            offsets: cat(g, &s.offsets)?,
            centricity: s.centricity.as_ref().map(|c| cat(g, c)).transpose()?,
            boundary: s.boundary.as_ref().map(|b| cat(g, b)).transpose()?,
        };
        let terms = losses::stream_losses(g, &pred, targets, num_verbs, w)?;
        let mut extra = Vec::new();
        if i == 0 {
            if let Some(ac) = &fwd.audio_classes {
                let a = cat(g, ac)?;
                extra.push(losses::focal_classification_loss(g, a, &targets.classes, num_verbs, w)?);
            }
        }
        let (t, b) = losses::combine(g, &terms, &extra, w)?;
        totals.push((t, 1.0));
        sum.regression += b.regression;
        sum.classification += b.classification;
        sum.boundary += b.boundary;
        sum.centricity += b.centricity;
        sum.total += b.total;
        sum.excluded_targets += b.excluded_targets;
    }
    let total = if totals.len() == 1 {
        totals[0].0
    } else {
        g.weighted_sum(&totals)?
    };
    Ok((total, sum))
}

/// Detached head outputs, one entry per detector stream. In score fusion the
/// audio classifier's scores are already merged into the class scores.
pub fn head_outputs(g: &Graph, fwd: &Forward, cfg: &ModelConfig) -> Result<Vec<HeadOutputs>> {
    let (cv, cn) = (cfg.heads.num_verbs, cfg.heads.num_nouns);
    let mut out = Vec::with_capacity(fwd.streams.len());
    for s in &fwd.streams {
        let mut levels = Vec::with_capacity(s.classes.len());
        for l in 0..s.classes.len() {
            let (mut verb, mut noun) = split_class_scores(g.value(s.classes[l]), cv);
            let (mut audio_verb, mut audio_noun) = (None, None);
            if let Some(ac) = &fwd.audio_classes {
                let (av, an) = split_class_scores(g.value(ac[l]), cv);
                match cfg.fusion.score_mode() {
                    Some(mode) if fwd.layout == Layout::Score => {
                        verb = fusion::fuse_classification_scores(&verb, &av, mode)?;
                        noun = fusion::fuse_classification_scores(&noun, &an, mode)?;
                    }
                    _ => {
                        audio_verb = Some(av);
                        audio_noun = Some(an);
                    }
                }
            }
            levels.push(LevelOutputs {
                stride: s.strides[l],
                verb,
                noun,
                offsets: heads::pairs(g.value(s.offsets[l])),
                centricity: s.centricity.as_ref().map(|c| g.value(c[l]).data().to_vec()),
                boundary: s.boundary.as_ref().map(|b| heads::pairs(g.value(b[l]))),
                audio_verb,
                audio_noun,
            });
        }
        out.push(HeadOutputs {
            num_verbs: cv,
            num_nouns: cn,
            levels,
        });
    }
    Ok(out)
}

/// Decoded proposals of one video; proposal fusion concatenates both streams.
pub fn proposals(
    outputs: &[HeadOutputs],
    video_id: &str,
    duration: f64,
    min_length: f64,
) -> Result<ProposalSet> {
    let mut sets = outputs.iter().map(|o| ProposalSet {
        video_id: String::from(video_id),
        proposals: decode_proposals(o, duration, min_length),
    });
    let first = sets.next().ok_or_else(|| Error::contract("no detector streams"))?;
    sets.try_fold(first, fusion::fuse_proposal_sets)
}

/// Forward pass without gradients, returning detached outputs.
pub fn infer(
    store: &ParamStore,
    cfg: &ModelConfig,
    visual: &FeatureSequence,
    audio: &FeatureSequence,
) -> Result<Vec<HeadOutputs>> {
    let mut g = Graph::new();
    let fwd = forward(&mut g, store, cfg, visual, audio)?;
    head_outputs(&g, &fwd, cfg)
}
