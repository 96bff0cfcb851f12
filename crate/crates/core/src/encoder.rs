//! Input projection and N-level self-attention feature pyramids.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::{attention, attention_qkv, CrossAttentionParams};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }

    /// Parameter namespace of this modality's encoder.
    pub fn encoder_prefix(self) -> String {
        format!("encoder.{}", self.as_str())
    }
}

/// Per-modality feature sequence, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub stride_seconds: f64,
    pub features: Tensor,
}

impl FeatureSequence {
    pub fn new(modality: Modality, stride_seconds: f64, features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() == 0 {
            return Err(Error::contract(format!(
                "feature sequence needs a non-empty T×D matrix, got {:?}",
                features.shape()
            )));
        }
        if !(stride_seconds > 0.0) {
            return Err(Error::contract(format!(
                "stride must be positive, got {stride_seconds}"
            )));
        }
        Ok(Self {
            modality,
            stride_seconds,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `start..start + len`, keeping the stride.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() || len == 0 {
            return Err(Error::contract(format!(
                "crop {start}..{} out of range for {} timesteps",
                start + len,
                self.len()
            )));
        }
        let d = self.dim();
        let data = self.features.data()[start * d..(start + len) * d].to_vec();
        Self::new(self.modality, self.stride_seconds, Tensor::new(vec![len, d], data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Pyramid levels N.
    pub levels: usize,
    pub blocks_per_level: usize,
    /// Crop length; sequences longer than this are rejected by the encoder.
    pub max_input_len: usize,
    /// Add sinusoidal timestep encodings to attention queries and keys.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            levels: 6,
            blocks_per_level: 1,
            max_input_len: 256,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.levels == 0 || self.blocks_per_level == 0 {
            return Err(Error::config("encoder dim, levels and blocks_per_level must be ≥ 1"));
        }
        let unit = 1usize << (self.levels - 1);
        if self.max_input_len == 0 || self.max_input_len % unit != 0 {
            return Err(Error::config(format!(
                "max_input_len {} must be a positive multiple of 2^(levels-1) = {unit}",
                self.max_input_len
            )));
        }
        Ok(())
    }

    /// Shortest sequence that still yields `levels` levels.
    pub fn min_input_len(&self) -> usize {
        1usize << (self.levels - 1)
    }
}

/// Level sizes under ceil-halving: `[T, ⌈T/2⌉, ⌈T/4⌉, …]`.
pub fn level_lengths(t: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels);
    let mut len = t;
    for _ in 0..levels {
        out.push(len);
        len = len.div_ceil(2);
    }
    out
}

/// Seconds per timestep at each level, doubling from `base`.
pub fn level_strides(base: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|l| base * (1u64 << l) as f64).collect()
}

/// Pyramid of graph nodes; level ℓ is a `len_ℓ × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
    pub level_strides: Vec<f64>,
}

impl FeaturePyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_lengths(&self, g: &Graph) -> Vec<usize> {
        self.levels.iter().map(|&v| g.value(v).rows()).collect()
    }

    pub fn to_tensors(&self, g: &Graph) -> Vec<Tensor> {
        self.levels.iter().map(|&v| g.value(v).detached()).collect()
    }
}

fn block_prefix(prefix: &str, level: usize, block: usize) -> String {
    format!("{prefix}.level{level}.block{block}")
}

/// Registers the projection and per-level attention blocks under `prefix`.
pub fn register_params(store: &mut ParamStore, prefix: &str, input_dim: usize, cfg: &EncoderConfig) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    store.init_uniform(&format!("{prefix}.proj"), &[input_dim, d], input_dim)?;
    for level in 0..cfg.levels {
        for block in 0..cfg.blocks_per_level {
            let p = block_prefix(prefix, level, block);
            CrossAttentionParams::register(store, &format!("{p}.attn"), d)?;
            store.init_constant(&format!("{p}.norm.gain"), &[d], 1.0)?;
            store.init_constant(&format!("{p}.norm.bias"), &[d], 0.0)?;
        }
    }
    Ok(())
}

/// Bias-free linear map `D_in → d` followed by ReLU.
pub fn project_features(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    seq: &FeatureSequence,
    cfg: &EncoderConfig,
) -> Result<Var> {
    if seq.len() > cfg.max_input_len {
        return Err(Error::CropRequired {
            len: seq.len(),
            max: cfg.max_input_len,
        });
    }
    let x = g.input(seq.features.clone());
    let w = g.param(store, &format!("{prefix}.proj"))?;
    let h = g.matmul(x, w)?;
    Ok(g.relu(h))
}

/// `T × d` sinusoidal encoding: column `2i` is `sin(t·ω_i)`, column `2i + 1` is
/// `cos(t·ω_i)`, with `ω_i = 10000^(−2i/d)`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for row in 0..t {
        for c in 0..d {
            let i = (c / 2) as f64;
            let w = libm::pow(10_000.0, -2.0 * i / d as f64);
            let a = row as f64 * w;
            data[row * d + c] = if c % 2 == 0 { libm::sin(a) } else { libm::cos(a) };
        }
    }
    Tensor::new(vec![t, d], data).expect("shape matches data")
}

/// `x` plus its timestep encoding.
pub fn with_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (t, d) = (g.value(x).rows(), g.value(x).cols());
    let pe = g.input(positional_encoding(t, d));
    g.add(x, pe)
}

/// `x + SelfAttention(LayerNorm(x))`. With `positional`, queries and keys see
/// timestep encodings; values do not.
fn encoder_block(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, positional: bool) -> Result<Var> {
    let attn = CrossAttentionParams::bind(g, store, &format!("{prefix}.attn"))?;
    let gain = g.param(store, &format!("{prefix}.norm.gain"))?;
    let bias = g.param(store, &format!("{prefix}.norm.bias"))?;
    let n = g.layer_norm(x, gain, bias)?;
    let a = if positional {
        let qk = with_positions(g, n)?;
        attention_qkv(g, qk, qk, n, &attn)?
    } else {
        attention(g, n, n, &attn)?
    };
    g.add(x, a)
}

/// Level 0 is the block output on `x`; level ℓ+1 is the block applied to a
/// stride-2 max-pool of level ℓ.
pub fn build_pyramid(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    base_stride: f64,
    cfg: &EncoderConfig,
) -> Result<FeaturePyramid> {
    let t = g.value(x).rows();
    if t < cfg.min_input_len() {
        return Err(Error::config(format!(
            "{t} timesteps cannot form {} pyramid levels (need ≥ {})",
            cfg.levels,
            cfg.min_input_len()
        )));
    }
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut cur = x;
    for level in 0..cfg.levels {
        if level > 0 {
            cur = g.max_pool2(cur)?;
        }
        for block in 0..cfg.blocks_per_level {
            cur = encoder_block(g, store, &block_prefix(prefix, level, block), cur, cfg.positional)?;
        }
        levels.push(cur);
    }
    Ok(FeaturePyramid {
        levels,
        level_strides: level_strides(base_stride, cfg.levels),
    })
}

/// Projection followed by pyramid construction, in the modality's own namespace.
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    seq: &FeatureSequence,
    cfg: &EncoderConfig,
) -> Result<FeaturePyramid> {
    let prefix = seq.modality.encoder_prefix();
    let x = project_features(g, store, &prefix, seq, cfg)?;
    build_pyramid(g, store, &prefix, x, seq.stride_seconds, cfg)
}
