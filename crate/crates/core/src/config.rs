//! Run configuration: every module's settings behind flat dotted keys.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::eval::{BinEdges, EvalConfig};
use crate::fusion::FusionStrategy;
use crate::heads::HeadConfig;
use crate::labels::{CentreNormalizer, LabelConfig, RegressionRanges};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::numerics::FocalParams;
use crate::postprocess::{PostprocessConfig, ScoreWeights};
use crate::synth::SynthConfig;
use crate::train::OptimConfig;
use crate::{Error, Result};

/// Which family of one-stage detector the run imitates. Only the boundary-
/// refining family has boundary-confidence heads, so the others zero γ and λ2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineMode {
    ActionformerLike,
    TridetLike,
    RabLike,
}

impl BaselineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::ActionformerLike => "actionformer_like",
            BaselineMode::TridetLike => "tridet_like",
            BaselineMode::RabLike => "rab_like",
        }
    }

    pub fn has_boundary_head(self) -> bool {
        self == BaselineMode::RabLike
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BaselineMode::ActionformerLike,
            BaselineMode::TridetLike,
            BaselineMode::RabLike,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::config(format!("unknown baseline mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub eval_videos: usize,
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub visual_enabled: bool,
    pub audio_enabled: bool,
    pub fusion: FusionStrategy,
    pub fusion_residual: bool,
    pub centricity_enabled: bool,
    pub labels: LabelConfig,
    pub baseline: BaselineMode,
    pub loss: LossWeights,
    /// Per-level `[lo, hi]` bounds on the larger boundary offset, in base-stride units.
    pub regression_ranges: Vec<(f64, f64)>,
    pub post: PostprocessConfig,
    pub eval: EvalConfig,
    pub bins: BinEdges,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            synth: SynthConfig::default(),
            eval_videos: 5,
            encoder: EncoderConfig::default(),
            heads: HeadConfig::default(),
            visual_enabled: true,
            audio_enabled: true,
            fusion: FusionStrategy::FeatureFusionXattn,
            fusion_residual: true,
            centricity_enabled: true,
            labels: LabelConfig::default(),
            baseline: BaselineMode::RabLike,
            loss: LossWeights::default(),
            regression_ranges: vec![
                (0.0, 4.0),
                (4.0, 8.0),
                (8.0, 16.0),
                (16.0, 32.0),
                (32.0, 64.0),
                (64.0, f64::INFINITY),
            ],
            post: PostprocessConfig::default(),
            eval: EvalConfig::default(),
            bins: BinEdges::default(),
            optim: OptimConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value.trim() {
        "inf" => Ok(f64::INFINITY),
        v => parse(key, v),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        v => Err(Error::config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v)).collect()
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

/// Consecutive edges `[e0, e1, …]` → ranges `[(e0, e1), (e1, e2), …]`.
fn ranges_from_edges(key: &str, edges: &[f64]) -> Result<Vec<(f64, f64)>> {
    if edges.len() < 2 {
        return Err(Error::config(format!("`{key}` needs ≥ 2 edges")));
    }
    Ok(edges.windows(2).map(|w| (w[0], w[1])).collect())
}

impl RunConfig {
    /// Every recognised key, in canonical order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "classes.verbs",
        "classes.nouns",
        "synth.seed",
        "synth.train_videos",
        "synth.eval_videos",
        "synth.duration_seconds",
        "synth.base_stride_seconds",
        "synth.visual_dim",
        "synth.audio_dim",
        "synth.density",
        "synth.duration_mixture",
        "synth.min_duration",
        "synth.max_duration",
        "synth.audio_informativeness",
        "synth.audio_onset_bias",
        "synth.audio_onset_decay",
        "synth.visual_verb_share",
        "synth.audio_verb_share",
        "synth.visual_noise",
        "synth.audio_noise",
        "encoder.dim",
        "encoder.levels",
        "encoder.blocks_per_level",
        "encoder.max_input_len",
        "encoder.positional",
        "visual.enabled",
        "audio.enabled",
        "fusion.strategy",
        "fusion.residual",
        "heads.hidden_channels",
        "heads.kernel_width",
        "heads.layers",
        "centricity.enabled",
        "centricity.sigma",
        "centricity.normalizer",
        "baseline.mode",
        "loss.lambda1",
        "loss.lambda2",
        "loss.lambda3",
        "loss.verb_weight",
        "loss.noun_weight",
        "loss.focal_alpha",
        "loss.focal_gamma",
        "labels.regression_ranges",
        "score.tau",
        "score.beta",
        "score.gamma",
        "post.top_k_verb",
        "post.top_k_noun",
        "post.pre_nms_top_k",
        "post.nms_sigma",
        "post.score_floor",
        "post.max_detections",
        "post.min_length",
        "eval.tiou_thresholds",
        "eval.relative_bins",
        "eval.absolute_bins",
        "optim.method",
        "optim.learning_rate",
        "optim.momentum",
        "optim.clip_norm",
        "optim.iterations",
        "optim.batch_size",
        "optim.warmup",
    ];

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "classes.verbs" => {
                let n = parse(key, v)?;
                self.synth.num_verbs = n;
                self.heads.num_verbs = n;
            }
            "classes.nouns" => {
                let n = parse(key, v)?;
                self.synth.num_nouns = n;
                self.heads.num_nouns = n;
            }
            "synth.seed" => self.synth.seed = parse(key, v)?,
            "synth.train_videos" => self.synth.n_videos = parse(key, v)?,
            "synth.eval_videos" => self.eval_videos = parse(key, v)?,
            "synth.duration_seconds" => self.synth.duration_seconds = parse_f64(key, v)?,
            "synth.base_stride_seconds" => self.synth.base_stride_seconds = parse_f64(key, v)?,
            "synth.visual_dim" => self.synth.visual_dim = parse(key, v)?,
            "synth.audio_dim" => self.synth.audio_dim = parse(key, v)?,
            "synth.density" => self.synth.density = parse_f64(key, v)?,
            "synth.duration_mixture" => {
                let w = parse_list(key, v)?;
                self.synth.duration_mixture = w
                    .try_into()
                    .map_err(|_| Error::config("`synth.duration_mixture` needs 5 weights"))?;
            }
            "synth.min_duration" => self.synth.min_duration = parse_f64(key, v)?,
            "synth.max_duration" => self.synth.max_duration = parse_f64(key, v)?,
            "synth.audio_informativeness" => self.synth.audio_informativeness = parse_f64(key, v)?,
            "synth.audio_onset_bias" => self.synth.audio_onset_bias = parse_f64(key, v)?,
            "synth.audio_onset_decay" => self.synth.audio_onset_decay = parse_f64(key, v)?,
            "synth.visual_verb_share" => self.synth.visual_verb_share = parse_f64(key, v)?,
            "synth.audio_verb_share" => self.synth.audio_verb_share = parse_f64(key, v)?,
            "synth.visual_noise" => self.synth.visual_noise = parse_f64(key, v)?,
            "synth.audio_noise" => self.synth.audio_noise = parse_f64(key, v)?,
            "encoder.dim" => self.encoder.dim = parse(key, v)?,
            "encoder.levels" => self.encoder.levels = parse(key, v)?,
            "encoder.blocks_per_level" => self.encoder.blocks_per_level = parse(key, v)?,
            "encoder.max_input_len" => self.encoder.max_input_len = parse(key, v)?,
            "encoder.positional" => self.encoder.positional = parse_bool(key, v)?,
            "visual.enabled" => self.visual_enabled = parse_bool(key, v)?,
            "audio.enabled" => self.audio_enabled = parse_bool(key, v)?,
            "fusion.strategy" => self.fusion = v.parse()?,
            "fusion.residual" => self.fusion_residual = parse_bool(key, v)?,
            "heads.hidden_channels" => self.heads.hidden_channels = parse(key, v)?,
            "heads.kernel_width" => self.heads.kernel_width = parse(key, v)?,
            "heads.layers" => self.heads.layers = parse(key, v)?,
            "centricity.enabled" => self.centricity_enabled = parse_bool(key, v)?,
            "centricity.sigma" => self.labels.sigma = parse_f64(key, v)?,
            "centricity.normalizer" => {
                self.labels.normalizer = match v {
                    "half_length" => CentreNormalizer::HalfLength,
                    "level_stride" => CentreNormalizer::LevelStride,
                    _ => return Err(Error::config(format!("`{key}`: unknown normaliser `{v}`"))),
                }
            }
            "baseline.mode" => self.baseline = v.parse()?,
            "loss.lambda1" => self.loss.lambda1 = parse_f64(key, v)?,
            "loss.lambda2" => self.loss.lambda2 = parse_f64(key, v)?,
            "loss.lambda3" => self.loss.lambda3 = parse_f64(key, v)?,
            "loss.verb_weight" => self.loss.verb_weight = parse_f64(key, v)?,
            "loss.noun_weight" => self.loss.noun_weight = parse_f64(key, v)?,
            "loss.focal_alpha" => self.loss.focal.alpha = parse_f64(key, v)?,
            "loss.focal_gamma" => self.loss.focal.gamma = parse_f64(key, v)?,
            "labels.regression_ranges" => {
                self.regression_ranges = ranges_from_edges(key, &parse_list(key, v)?)?
            }
            "score.tau" => self.post.weights.tau = parse_f64(key, v)?,
            "score.beta" => self.post.weights.beta = parse_f64(key, v)?,
            "score.gamma" => self.post.weights.gamma = parse_f64(key, v)?,
            "post.top_k_verb" => self.post.top_k_verb = parse(key, v)?,
            "post.top_k_noun" => self.post.top_k_noun = parse(key, v)?,
            "post.pre_nms_top_k" => self.post.pre_nms_top_k = parse(key, v)?,
            "post.nms_sigma" => self.post.nms_sigma = parse_f64(key, v)?,
            "post.score_floor" => self.post.score_floor = parse_f64(key, v)?,
            "post.max_detections" => self.post.max_detections = parse(key, v)?,
            "post.min_length" => self.post.min_length = parse_f64(key, v)?,
            "eval.tiou_thresholds" => self.eval.tiou_thresholds = parse_list(key, v)?,
            "eval.relative_bins" => self.bins.relative = parse_list(key, v)?,
            "eval.absolute_bins" => self.bins.absolute = parse_list(key, v)?,
            "optim.method" => self.optim.method = v.parse()?,
            "optim.learning_rate" => self.optim.learning_rate = parse_f64(key, v)?,
            "optim.momentum" => self.optim.momentum = parse_f64(key, v)?,
            "optim.clip_norm" => self.optim.clip_norm = parse_f64(key, v)?,
            "optim.iterations" => self.optim.iterations = parse(key, v)?,
            "optim.batch_size" => self.optim.batch_size = parse(key, v)?,
            "optim.warmup" => self.optim.warmup = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Text value of one key, in the form `set` accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let b = |v: bool| if v { "true".to_string() } else { "false".to_string() };
        Ok(match key {
            "seed" => self.seed.to_string(),
            "classes.verbs" => self.heads.num_verbs.to_string(),
            "classes.nouns" => self.heads.num_nouns.to_string(),
            "synth.seed" => self.synth.seed.to_string(),
            "synth.train_videos" => self.synth.n_videos.to_string(),
            "synth.eval_videos" => self.eval_videos.to_string(),
            "synth.duration_seconds" => fmt_f64(self.synth.duration_seconds),
            "synth.base_stride_seconds" => fmt_f64(self.synth.base_stride_seconds),
            "synth.visual_dim" => self.synth.visual_dim.to_string(),
            "synth.audio_dim" => self.synth.audio_dim.to_string(),
            "synth.density" => fmt_f64(self.synth.density),
            "synth.duration_mixture" => fmt_list(&self.synth.duration_mixture),
            "synth.min_duration" => fmt_f64(self.synth.min_duration),
            "synth.max_duration" => fmt_f64(self.synth.max_duration),
            "synth.audio_informativeness" => fmt_f64(self.synth.audio_informativeness),
            "synth.audio_onset_bias" => fmt_f64(self.synth.audio_onset_bias),
            "synth.audio_onset_decay" => fmt_f64(self.synth.audio_onset_decay),
            "synth.visual_verb_share" => fmt_f64(self.synth.visual_verb_share),
            "synth.audio_verb_share" => fmt_f64(self.synth.audio_verb_share),
            "synth.visual_noise" => fmt_f64(self.synth.visual_noise),
            "synth.audio_noise" => fmt_f64(self.synth.audio_noise),
            "encoder.dim" => self.encoder.dim.to_string(),
            "encoder.levels" => self.encoder.levels.to_string(),
            "encoder.blocks_per_level" => self.encoder.blocks_per_level.to_string(),
            "encoder.max_input_len" => self.encoder.max_input_len.to_string(),
            "encoder.positional" => self.encoder.positional.to_string(),
            "visual.enabled" => b(self.visual_enabled),
            "audio.enabled" => b(self.audio_enabled),
            "fusion.strategy" => self.fusion.as_str().into(),
            "fusion.residual" => b(self.fusion_residual),
            "heads.hidden_channels" => self.heads.hidden_channels.to_string(),
            "heads.kernel_width" => self.heads.kernel_width.to_string(),
            "heads.layers" => self.heads.layers.to_string(),
            "centricity.enabled" => b(self.centricity_enabled),
            "centricity.sigma" => fmt_f64(self.labels.sigma),
            "centricity.normalizer" => match self.labels.normalizer {
                CentreNormalizer::HalfLength => "half_length".into(),
                CentreNormalizer::LevelStride => "level_stride".into(),
            },
            "baseline.mode" => self.baseline.as_str().into(),
            "loss.lambda1" => fmt_f64(self.loss.lambda1),
            "loss.lambda2" => fmt_f64(self.loss.lambda2),
            "loss.lambda3" => fmt_f64(self.loss.lambda3),
            "loss.verb_weight" => fmt_f64(self.loss.verb_weight),
            "loss.noun_weight" => fmt_f64(self.loss.noun_weight),
            "loss.focal_alpha" => fmt_f64(self.loss.focal.alpha),
            "loss.focal_gamma" => fmt_f64(self.loss.focal.gamma),
            "labels.regression_ranges" => {
                let mut edges: Vec<f64> = self.regression_ranges.iter().map(|r| r.0).collect();
                if let Some(last) = self.regression_ranges.last() {
                    edges.push(last.1);
                }
                fmt_list(&edges)
            }
            "score.tau" => fmt_f64(self.post.weights.tau),
            "score.beta" => fmt_f64(self.post.weights.beta),
            "score.gamma" => fmt_f64(self.post.weights.gamma),
            "post.top_k_verb" => self.post.top_k_verb.to_string(),
            "post.top_k_noun" => self.post.top_k_noun.to_string(),
            "post.pre_nms_top_k" => self.post.pre_nms_top_k.to_string(),
            "post.nms_sigma" => fmt_f64(self.post.nms_sigma),
            "post.score_floor" => fmt_f64(self.post.score_floor),
            "post.max_detections" => self.post.max_detections.to_string(),
            "post.min_length" => fmt_f64(self.post.min_length),
            "eval.tiou_thresholds" => fmt_list(&self.eval.tiou_thresholds),
            "eval.relative_bins" => fmt_list(&self.bins.relative),
            "eval.absolute_bins" => fmt_list(&self.bins.absolute),
            "optim.method" => self.optim.method.as_str().to_string(),
            "optim.learning_rate" => fmt_f64(self.optim.learning_rate),
            "optim.momentum" => fmt_f64(self.optim.momentum),
            "optim.clip_norm" => fmt_f64(self.optim.clip_norm),
            "optim.iterations" => self.optim.iterations.to_string(),
            "optim.batch_size" => self.optim.batch_size.to_string(),
            "optim.warmup" => self.optim.warmup.to_string(),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        })
    }

    /// `key = value` lines for every key, in canonical order.
    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("known key"));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.encoder.validate()?;
        self.heads.validate()?;
        self.loss.validate()?;
        self.post.validate()?;
        self.eval.validate()?;
        self.optim.validate()?;
        if self.heads.num_verbs != self.synth.num_verbs || self.heads.num_nouns != self.synth.num_nouns {
            return Err(Error::config("head and data class counts differ"));
        }
        if !self.visual_enabled && !self.audio_enabled {
            return Err(Error::config("at least one of visual.enabled, audio.enabled must be true"));
        }
        if !(self.labels.sigma > 0.0) {
            return Err(Error::config("centricity.sigma must be positive"));
        }
        if self.regression_ranges.len() != self.encoder.levels {
            return Err(Error::config(format!(
                "{} regression ranges for {} pyramid levels",
                self.regression_ranges.len(),
                self.encoder.levels
            )));
        }
        RegressionRanges(self.regression_ranges.clone()).validate()?;
        let t = self.synth.timesteps();
        if t < self.encoder.min_input_len() {
            return Err(Error::config(format!(
                "{t} timesteps per video cannot form {} levels",
                self.encoder.levels
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder,
            heads: self.heads,
            visual_dim: self.synth.visual_dim,
            audio_dim: self.synth.audio_dim,
            visual_enabled: self.visual_enabled,
            audio_enabled: self.audio_enabled,
            fusion: self.fusion,
            fusion_residual: self.fusion_residual,
            centricity_enabled: self.centricity_enabled,
            boundary_enabled: self.baseline.has_boundary_head(),
        }
    }

    /// Loss weights after the baseline and centricity switches.
    pub fn effective_loss(&self) -> LossWeights {
        self.loss
            .effective(self.baseline.has_boundary_head(), self.centricity_enabled)
    }

    /// Post-processing settings after the baseline, audio and centricity
    /// switches: γ needs boundary heads, τ an audio classifier, β centricity.
    pub fn effective_post(&self) -> PostprocessConfig {
        let mut w: ScoreWeights = self.post.weights.for_mode(self.baseline);
        if !(self.audio_enabled && self.visual_enabled) {
            w.tau = 0.0;
        }
        if !self.centricity_enabled {
            w.beta = 0.0;
        }
        PostprocessConfig { weights: w, ..self.post }
    }

    pub fn regression_ranges_seconds(&self) -> Result<RegressionRanges> {
        RegressionRanges::from_stride_units(&self.regression_ranges, self.synth.base_stride_seconds)
    }

    /// Synthesis settings of the evaluation split.
    pub fn eval_synth(&self) -> SynthConfig {
        SynthConfig {
            n_videos: self.eval_videos,
            ..self.synth.clone()
        }
    }

    pub fn focal(&self) -> FocalParams {
        self.loss.focal
    }
}
