//! Deterministic generator of dense, overlapping action videos with aligned
//! visual and audio feature sequences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::encoder::{FeatureSequence, Modality};
use crate::labels::GroundTruthSegment;
use crate::math;
use crate::numerics::{stream_seed, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub duration_seconds: f64,
    pub base_stride_seconds: f64,
    pub num_verbs: usize,
    pub num_nouns: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Mean number of actions per minute.
    pub density: f64,
    /// Weights of the XS, S, M, L, XL duration groups.
    pub duration_mixture: [f64; 5],
    /// Upper duration bound of the open-ended XL group, seconds.
    pub max_duration: f64,
    /// Lower duration bound of the XS group, seconds.
    pub min_duration: f64,
    /// Scale of the class signal in the audio stream; 0 leaves pure noise.
    pub audio_informativeness: f64,
    /// Share of the audio envelope concentrated at action onsets.
    pub audio_onset_bias: f64,
    /// Decay time of the onset burst, seconds.
    pub audio_onset_decay: f64,
    /// Verb share of the visual pair prototype, `w` in `√w·verb + √(1−w)·noun`.
    pub visual_verb_share: f64,
    /// Verb share of the audio pair prototype.
    pub audio_verb_share: f64,
    pub visual_noise: f64,
    pub audio_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 20,
            duration_seconds: 128.0,
            base_stride_seconds: 0.5,
            num_verbs: 4,
            num_nouns: 6,
            visual_dim: 16,
            audio_dim: 16,
            density: 12.0,
            duration_mixture: [0.25, 0.25, 0.2, 0.15, 0.15],
            max_duration: 16.0,
            min_duration: 0.5,
            audio_informativeness: 0.7,
            audio_onset_bias: 0.8,
            audio_onset_decay: 1.0,
            visual_verb_share: 0.5,
            audio_verb_share: 0.5,
            visual_noise: 0.5,
            audio_noise: 0.5,
            seed: 7,
        }
    }
}

/// Lower and upper duration bound of each group, seconds.
const GROUP_BOUNDS: [(f64, f64); 4] = [(0.0, 2.0), (2.0, 4.0), (4.0, 6.0), (6.0, 8.0)];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synth: {m}")));
        if !(self.density > 0.0) {
            return bad("density must be positive");
        }
        let total: f64 = self.duration_mixture.iter().sum();
        if self.duration_mixture.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad("duration mixture weights must be ≥ 0 and sum to 1");
        }
        if !(self.base_stride_seconds > 0.0) || !(self.duration_seconds >= self.base_stride_seconds) {
            return bad("need 0 < stride ≤ duration");
        }
        if !(self.min_duration > 0.0 && self.min_duration < 2.0) || !(self.max_duration > 8.0) {
            return bad("min duration must lie in (0, 2) and max duration exceed 8 s");
        }
        if self.max_duration > self.duration_seconds {
            return bad("max duration exceeds the video duration");
        }
        if self.num_verbs == 0 || self.num_nouns == 0 {
            return bad("need ≥ 1 verb and ≥ 1 noun");
        }
        if self.visual_dim < self.num_verbs + self.num_nouns || self.audio_dim < self.num_verbs + self.num_nouns {
            return bad("feature dims must hold num_verbs + num_nouns orthogonal prototypes");
        }
        for (name, v) in [
            ("audio_informativeness", self.audio_informativeness),
            ("audio_onset_bias", self.audio_onset_bias),
            ("visual_verb_share", self.visual_verb_share),
            ("audio_verb_share", self.audio_verb_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.audio_onset_decay > 0.0) || !(self.visual_noise >= 0.0) || !(self.audio_noise >= 0.0) {
            return bad("onset decay must be > 0 and noise levels ≥ 0");
        }
        Ok(())
    }

    /// Timesteps per video.
    pub fn timesteps(&self) -> usize {
        (self.duration_seconds / self.base_stride_seconds) as usize
    }

    fn group_bounds(&self, g: usize) -> (f64, f64) {
        match g {
            0 => (self.min_duration, GROUP_BOUNDS[0].1),
            4 => (8.0, self.max_duration),
            _ => GROUP_BOUNDS[g],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub duration: f64,
    pub segments: Vec<GroundTruthSegment>,
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
}

/// Orthonormal rows from Gram–Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = math::sqrt(v.iter().map(|a| a * a).sum());
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            out.push(v);
        }
    }
    out
}

/// Verb and noun prototypes of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub verbs: Vec<Vec<f64>>,
    pub nouns: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn generate(seed: u64, modality: Modality, num_verbs: usize, num_nouns: usize, dim: usize) -> Self {
        let key = format!("synth.prototypes.{}", modality.as_str());
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &key));
        let mut rows = orthonormal(&mut rng, num_verbs + num_nouns, dim);
        let nouns = rows.split_off(num_verbs);
        Self { verbs: rows, nouns }
    }

    /// Unit-norm pair prototype `√w·verb + √(1−w)·noun`.
    pub fn pair(&self, verb: usize, noun: usize, verb_share: f64) -> Vec<f64> {
        let (kv, kn) = (math::sqrt(verb_share), math::sqrt(1.0 - verb_share));
        self.verbs[verb]
            .iter()
            .zip(&self.nouns[noun])
            .map(|(a, b)| kv * a + kn * b)
            .collect()
    }
}

/// Fraction of the window `[x − w/2, x + w/2]` covered by the segment.
fn coverage(x: f64, w: f64, seg: &GroundTruthSegment) -> f64 {
    let lo = (x - 0.5 * w).max(seg.start);
    let hi = (x + 0.5 * w).min(seg.end);
    ((hi - lo) / w).max(0.0)
}

fn draw_segments(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<GroundTruthSegment> {
    let mean = cfg.density * cfg.duration_seconds / 60.0;
    let k = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let mut segs = Vec::with_capacity(k);
    for _ in 0..k {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut group = 4;
        for (g, w) in cfg.duration_mixture.iter().enumerate() {
            acc += w;
            if u < acc {
                group = g;
                break;
            }
        }
        let (lo, hi) = cfg.group_bounds(group);
        let dur = lo + (hi - lo) * (1.0 - rng.random::<f64>());
        let start = rng.random::<f64>() * (cfg.duration_seconds - dur);
        // Annotation times are kept at f32 precision, like the feature blobs.
        let s = f64::from(start as f32);
        let e = f64::from((start + dur) as f32).min(cfg.duration_seconds);
        let verb = rng.random_range(0..cfg.num_verbs);
        let noun = rng.random_range(0..cfg.num_nouns);
        segs.push(GroundTruthSegment {
            start: s,
            end: e,
            verb,
            noun,
        });
    }
    segs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    segs
}

fn features(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    segments: &[GroundTruthSegment],
    protos: &Prototypes,
    verb_share: f64,
    noise: f64,
    envelope: impl Fn(f64, &GroundTruthSegment) -> f64,
) -> Tensor {
    let t = cfg.timesteps();
    let dim = protos.verbs[0].len();
    let stride = cfg.base_stride_seconds;
    let pairs: Vec<Vec<f64>> = segments.iter().map(|s| protos.pair(s.verb, s.noun, verb_share)).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = vec![0.0; t * dim];
    for i in 0..t {
        let x = i as f64 * stride;
        let row = &mut data[i * dim..(i + 1) * dim];
        for (seg, p) in segments.iter().zip(&pairs) {
            let c = coverage(x, stride, seg);
            if c > 0.0 {
                let a = c * envelope(x, seg);
                row.iter_mut().zip(p).for_each(|(r, v)| *r += a * v);
            }
        }
        for r in row.iter_mut() {
            *r = f64::from((*r + noise * normal.sample(rng)) as f32);
        }
    }
    Tensor::new(vec![t, dim], data).expect("consistent shape")
}

/// Builds one video from its own random stream, keyed by `video_id`.
pub fn generate_video(cfg: &SynthConfig, video_id: &str, visual: &Prototypes, audio: &Prototypes) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, video_id));
    let segments = draw_segments(cfg, &mut rng);
    let vf = features(cfg, &mut rng, &segments, visual, cfg.visual_verb_share, cfg.visual_noise, |_, _| 1.0);
    let (bias, decay, info) = (cfg.audio_onset_bias, cfg.audio_onset_decay, cfg.audio_informativeness);
    let af = features(cfg, &mut rng, &segments, audio, cfg.audio_verb_share, cfg.audio_noise, |x, seg| {
        let since = (x - seg.start).max(0.0);
        info * ((1.0 - bias) + bias * math::exp(-since / decay))
    });
    Ok(SyntheticVideo {
        video_id: video_id.into(),
        duration: cfg.duration_seconds,
        segments,
        visual: FeatureSequence::new(Modality::Visual, cfg.base_stride_seconds, vf)?,
        audio: FeatureSequence::new(Modality::Audio, cfg.base_stride_seconds, af)?,
    })
}

/// `cfg.n_videos` videos named `{split}-{index:03}`.
pub fn generate_dataset(cfg: &SynthConfig, split: &str) -> Result<Vec<SyntheticVideo>> {
    cfg.validate()?;
    let visual = Prototypes::generate(cfg.seed, Modality::Visual, cfg.num_verbs, cfg.num_nouns, cfg.visual_dim);
    let audio = Prototypes::generate(cfg.seed, Modality::Audio, cfg.num_verbs, cfg.num_nouns, cfg.audio_dim);
    (0..cfg.n_videos)
        .map(|i| generate_video(cfg, &format!("{split}-{i:03}"), &visual, &audio))
        .collect()
}

/// Mean number of other segments each segment overlaps.
pub fn mean_overlap_count(segments: &[GroundTruthSegment]) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    let mut n = 0usize;
    for (i, a) in segments.iter().enumerate() {
        for (j, b) in segments.iter().enumerate() {
            if i != j && a.start < b.end && b.start < a.end {
                n += 1;
            }
        }
    }
    n as f64 / segments.len() as f64
}
